from .tying import *  # noqa: F403
from .folding import *  # noqa: F403
from .equivalence import *  # noqa: F403
from .timeseries import *  # noqa: F403

__all__ = [
    *tying.__all__,  # type: ignore  # noqa: F405
    *folding.__all__,  # noqa: F405
    *equivalence.__all__,  # noqa: F405
    *timeseries.__all__,  # noqa: F405
]
