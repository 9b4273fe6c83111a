from .templates import *  # noqa: F403
from .similarity import *  # noqa: F403
from .init import *  # noqa: F403

__all__ = [
    *templates.__all__,  # type: ignore  # noqa: F405
    *similarity.__all__,  # noqa: F405
    *init.__all__,  # noqa: F405
]
