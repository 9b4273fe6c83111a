"""
Checkpoint files.

Layout: little-endian u64 manifest length, UTF-8 JSON manifest
``{"tensors": [{"name", "shape", "dtype": "f64", "offset", "len"}], "meta": {...}}``
(offsets and lengths in bytes, relative to the payload), then the raw
little-endian float64 payload.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from hybrid_cnn.errors import CheckpointError
from hybrid_cnn.models import ArchitectureSpec, Network
from hybrid_cnn.utils import deserialise_data, serialise_data

logger = logging.getLogger(__name__)

__all__ = [
    "CheckpointState",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "network_to_checkpoint",
    "network_from_checkpoint",
]

_LENGTH = struct.Struct("<Q")
_F64 = np.dtype("<f8")


@dataclass
class CheckpointState:
    """Named float64 tensors (in file order) plus JSON-compatible metadata."""

    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(state: CheckpointState) -> bytes:
    entries = []
    payload = []
    offset = 0
    for name, value in state.tensors.items():
        array = np.require(np.asarray(value, dtype=_F64), requirements="C")
        raw = array.tobytes()
        entries.append({"name": name, "shape": list(array.shape), "dtype": "f64", "offset": offset, "len": len(raw)})
        payload.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"tensors": entries, "meta": serialise_data(state.meta)},
        sort_keys=True,
        separators=(",", ":"),
        allow_nan=False,
    ).encode("utf-8")
    return b"".join([_LENGTH.pack(len(manifest)), manifest, *payload])


def decode_checkpoint(data: bytes) -> CheckpointState:
    """Parse a checkpoint.

    Raises:
        CheckpointError: Truncated file, unreadable manifest or tensor
            entries that do not match the payload.
    """
    if len(data) < _LENGTH.size:
        raise CheckpointError("checkpoint is shorter than its length prefix")
    (length,) = _LENGTH.unpack_from(data, 0)
    start = _LENGTH.size + length
    if start > len(data):
        raise CheckpointError(f"manifest length {length} exceeds file size {len(data)}")
    try:
        manifest = json.loads(data[_LENGTH.size : start].decode("utf-8"))
        entries = manifest["tensors"]
        meta = deserialise_data(manifest.get("meta", {}))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointError(f"corrupt checkpoint manifest: {e}") from e

    payload = data[start:]
    tensors: Dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in entries:
        try:
            name, shape, offset, size = entry["name"], tuple(entry["shape"]), entry["offset"], entry["len"]
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"corrupt tensor entry {entry!r}") from e
        if entry.get("dtype") != "f64":
            raise CheckpointError(f"tensor '{name}' has unsupported dtype {entry.get('dtype')!r}")
        if offset != expected_offset or size != 8 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"tensor '{name}' has inconsistent offset/len in the manifest")
        if offset + size > len(payload):
            raise CheckpointError(f"tensor '{name}' runs past the end of the payload")
        tensors[name] = np.frombuffer(payload, dtype=_F64, count=size // 8, offset=offset).astype(np.float64).reshape(shape)
        expected_offset += size
    if expected_offset != len(payload):
        raise CheckpointError(f"payload has {len(payload) - expected_offset} trailing bytes")
    return CheckpointState(tensors=tensors, meta=meta)


def save_checkpoint(state: CheckpointState, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(state))
    logger.debug(f"Saved checkpoint with {len(state.tensors)} tensors to {path}")


def load_checkpoint(path: Union[str, Path]) -> CheckpointState:
    return decode_checkpoint(Path(path).read_bytes())


def network_to_checkpoint(
    network: Network, meta: Optional[Dict[str, Any]] = None, extra_tensors: Optional[Dict[str, np.ndarray]] = None
) -> CheckpointState:
    """Checkpoint holding the network state plus what is needed to rebuild it."""
    tensors = network.state_dict()
    tensors.update(extra_tensors or {})
    full_meta = {
        "architecture": network.spec.to_dict(),
        "strategy": network.strategy.value,
        "init_scheme": network.init_scheme.value,
        "sparse_distribution": network.sparse_distribution.value,
    }
    full_meta.update(meta or {})
    return CheckpointState(tensors=tensors, meta=full_meta)


def network_from_checkpoint(state: CheckpointState) -> Network:
    """Rebuild the network stored by `network_to_checkpoint`.

    Raises:
        CheckpointError: The metadata has no architecture.
        DimensionError: A stored tensor does not fit the architecture.
    """
    if "architecture" not in state.meta:
        raise CheckpointError("checkpoint metadata has no architecture")
    spec = ArchitectureSpec.from_dict(state.meta["architecture"])
    network = Network(
        spec,
        seed=0,
        init_scheme=state.meta.get("init_scheme", "orthogonal"),
        strategy=state.meta.get("strategy", "weights"),
        sparse_distribution=state.meta.get("sparse_distribution", "normal"),
    )
    network.load_state_dict(state.tensors)
    return network
