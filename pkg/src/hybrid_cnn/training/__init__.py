from .optim import *  # noqa: F403
from .schedule import *  # noqa: F403
from .checkpoint import *  # noqa: F403
from .config import *  # noqa: F403
from .trainer import *  # noqa: F403
from .experiment import *  # noqa: F403

__all__ = [
    *optim.__all__,  # type: ignore  # noqa: F405
    *schedule.__all__,  # noqa: F405
    *checkpoint.__all__,  # noqa: F405
    *config.__all__,  # noqa: F405
    *trainer.__all__,  # noqa: F405
    *experiment.__all__,  # noqa: F405
]
