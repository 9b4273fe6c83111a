"""Soft parameter sharing for convolutional networks."""

from hybrid_cnn import analysis, core, models, sharing, tasks, training, utils
from hybrid_cnn.errors import *  # noqa: F403

__version__ = "0.2.0"

__all__ = [
    "analysis",
    "core",
    "models",
    "sharing",
    "tasks",
    "training",
    "utils",
    *errors.__all__,  # type: ignore  # noqa: F405
]
