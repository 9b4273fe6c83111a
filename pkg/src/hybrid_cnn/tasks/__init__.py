from .shortest_path import *  # noqa: F403
from .dataset_io import *  # noqa: F403

__all__ = [
    *shortest_path.__all__,  # type: ignore  # noqa: F405
    *dataset_io.__all__,  # noqa: F405
]
