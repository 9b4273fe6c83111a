from .data_utils import *  # noqa: F403
from .export_utils import *  # noqa: F403
from .general_utils import *  # noqa: F403
from .log_utils import *  # noqa: F403

__all__ = [
    *data_utils.__all__,  # type: ignore  # noqa: F405
    *export_utils.__all__,  # noqa: F405
    *general_utils.__all__,  # noqa: F405
    *log_utils.__all__,  # noqa: F405
]
