from .tensor import *  # noqa: F403
from .functional import *  # noqa: F403
from .gradcheck import *  # noqa: F403

__all__ = [
    *tensor.__all__,  # type: ignore  # noqa: F405
    *functional.__all__,  # noqa: F405
    *gradcheck.__all__,  # noqa: F405
]
