from typing import Any, Dict

import numpy as np

__all__ = ["dicts_equal", "derive_seed"]


def dicts_equal(d1: Dict[Any, Any], d2: Dict[Any, Any]) -> bool:
    """Check if two (JSON-like) dictionaries are equal, recursing into dicts and lists."""
    if d1.keys() != d2.keys():
        return False
    for key, value in d1.items():
        if isinstance(value, dict):
            if not isinstance(d2[key], dict) or not dicts_equal(value, d2[key]):
                return False
        elif isinstance(value, (list, tuple)):
            other = d2[key]
            if not isinstance(other, (list, tuple)) or len(value) != len(other):
                return False
            for v1, v2 in zip(value, other):
                if isinstance(v1, dict):
                    if not isinstance(v2, dict) or not dicts_equal(v1, v2):
                        return False
                elif v1 != v2:
                    return False
        elif value != d2[key]:
            return False
    return True


def derive_seed(base: int, *salt: int) -> int:
    """Deterministic child seed for a (base, salt...) tuple, independent of call order."""
    return int(np.random.SeedSequence([int(base), *[int(s) for s in salt]]).generate_state(1)[0])
