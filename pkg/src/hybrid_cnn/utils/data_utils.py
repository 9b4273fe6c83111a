import math
import warnings
from enum import Enum

import numpy as np

__all__ = ["serialise_data", "deserialise_data"]


def serialise_data(data):
    """Turn nested data into strict JSON values, tagging arrays with "__class__".

    Non-finite floats become None; inside arrays they come back as NaN.
    """
    if isinstance(data, dict):
        return {str(key): serialise_data(value) for key, value in data.items()}
    elif isinstance(data, (list, tuple)):
        return [serialise_data(item) for item in data]
    elif isinstance(data, Enum):
        return data.value
    elif isinstance(data, np.ndarray):
        return {
            "__class__": "numpy.ndarray",
            "dtype": str(data.dtype),
            "shape": list(data.shape),
            "data": [serialise_data(value) for value in data.reshape(-1).tolist()],
        }
    elif isinstance(data, float) and not math.isfinite(data):
        return None
    elif isinstance(data, np.generic):
        return serialise_data(data.item())
    else:
        return data


def deserialise_data(data):
    if isinstance(data, dict):
        if "__class__" not in data:
            return {key: deserialise_data(value) for key, value in data.items()}

        data = dict(data)
        cls_str = data.pop("__class__")
        if cls_str == "numpy.ndarray":
            return np.asarray(data["data"], dtype=data["dtype"]).reshape(data["shape"])
        else:
            warnings.warn(f"Unknown class: {cls_str}")
            return data
    elif isinstance(data, list):
        return [deserialise_data(item) for item in data]
    else:
        return data
