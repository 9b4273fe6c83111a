"""
Binary dataset files.

Layout: ASCII magic ``SPTH1\\n``, little-endian u32 example count, u16 H,
u16 W, then per example three row-major H*W byte planes (query, obstacle,
label) holding 0 or 1.
"""

import logging
import struct
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from hybrid_cnn.errors import DimensionError, UsageError
from hybrid_cnn.tasks.shortest_path import GridExample

logger = logging.getLogger(__name__)

__all__ = ["MAGIC", "encode_dataset", "decode_dataset", "write_dataset", "read_dataset"]

MAGIC = b"SPTH1\n"
_HEADER = struct.Struct("<IHH")


def encode_dataset(examples: Sequence[GridExample], grid: Tuple[int, int] = (32, 32)) -> bytes:
    """Serialise examples; `grid` only sets the header of an empty file."""
    if examples:
        grid = examples[0].shape
    h, w = grid
    parts = [MAGIC, _HEADER.pack(len(examples), h, w)]
    for i, example in enumerate(examples):
        if example.shape != (h, w):
            raise DimensionError(f"example {i} has shape {example.shape}, expected {(h, w)}")
        for plane in (example.query, example.obstacles, example.label):
            parts.append(np.ascontiguousarray(plane, dtype=np.uint8).tobytes())
    return b"".join(parts)


def decode_dataset(data: bytes) -> Tuple[List[GridExample], Tuple[int, int]]:
    """Parse bytes produced by `encode_dataset`; returns (examples, (H, W)).

    Raises:
        UsageError: Bad magic, truncated payload or non-binary plane values.
    """
    if not data.startswith(MAGIC):
        raise UsageError("not a shortest-path dataset file (bad magic)")
    offset = len(MAGIC)
    if len(data) < offset + _HEADER.size:
        raise UsageError("dataset header is truncated")
    count, h, w = _HEADER.unpack_from(data, offset)
    offset += _HEADER.size
    plane = h * w
    expected = offset + 3 * plane * count
    if len(data) != expected:
        raise UsageError(f"dataset payload has {len(data)} bytes, header implies {expected}")
    planes = np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(count, 3, h, w)
    if planes.size and planes.max() > 1:
        raise UsageError("dataset planes must only hold 0 or 1")
    examples = [
        GridExample(query=p[0].copy(), obstacles=p[1].copy(), label=p[2].copy()) for p in planes
    ]
    return examples, (h, w)


def write_dataset(path: Union[str, Path], examples: Sequence[GridExample], grid: Tuple[int, int] = (32, 32)) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_dataset(examples, grid))
    logger.debug(f"Wrote {len(examples)} examples to {path}")


def read_dataset(path: Union[str, Path]) -> List[GridExample]:
    examples, _ = decode_dataset(Path(path).read_bytes())
    return examples
