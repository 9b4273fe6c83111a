from .specs import *  # noqa: F403
from .builders import *  # noqa: F403
from .network import *  # noqa: F403

__all__ = [
    *specs.__all__,  # type: ignore  # noqa: F405
    *builders.__all__,  # noqa: F405
    *network.__all__,  # noqa: F405
]
