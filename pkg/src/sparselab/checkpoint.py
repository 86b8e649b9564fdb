"""Binary tensor container and model checkpoint persistence.

File layout: magic "NTC1", u64 little-endian header length, UTF-8 JSON
header mapping tensor name -> {dtype, shape, byte_offset, byte_len}, then a
contiguous little-endian payload. Offsets are ascending and non-overlapping;
round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, Transformer, _weight_shape, weight_names

MAGIC = b"NTC1"
CONFIG_KEY = "__config__"

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.uint8): "u8"}


def write_container(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write tensors in dict order; only float32 and uint8 arrays allowed."""
    header: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name, arr in tensors.items():
        key = np.dtype(arr.dtype)
        if key not in _DTYPE_NAMES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        data = np.ascontiguousarray(arr)
        if key == np.dtype(np.float32):
            data = data.astype("<f4", copy=False)
        raw = data.tobytes()
        header[name] = {
            "dtype": _DTYPE_NAMES[key],
            "shape": list(arr.shape),
            "byte_offset": offset,
            "byte_len": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for raw in chunks:
            f.write(raw)


def read_container(path: str | Path) -> dict[str, np.ndarray]:
    """Read and validate a container; raises CheckpointError on any defect."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a NTC1 container")
    (header_len,) = struct.unpack("<Q", blob[4:12])
    if 12 + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise CheckpointError(f"{path}: header must be a JSON object")

    payload = blob[12 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    prev_end = 0
    for name, meta in header.items():
        try:
            dtype = _DTYPES[meta["dtype"]]
            shape = tuple(int(s) for s in meta["shape"])
            off = int(meta["byte_offset"])
            nbytes = int(meta["byte_len"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad entry for {name!r}: {exc}") from exc
        if off < prev_end:
            raise CheckpointError(f"{path}: overlapping or non-ascending offset at {name!r}")
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected:
            raise CheckpointError(
                f"{path}: {name!r} byte_len {nbytes} != shape product {expected}"
            )
        if off + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {name!r}")
        tensors[name] = np.frombuffer(
            payload[off : off + nbytes], dtype=dtype
        ).reshape(shape).copy()
        prev_end = off + nbytes
    return tensors


def save_checkpoint(model: Transformer, path: str | Path) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name in weight_names(model.config):
        arr = model.weights[name]
        if arr.dtype != np.float32:
            raise CheckpointError(f"checkpoint weights must be float32, got {arr.dtype}")
        tensors[name] = arr
    cfg_bytes = json.dumps(asdict(model.config)).encode("utf-8")
    tensors[CONFIG_KEY] = np.frombuffer(cfg_bytes, dtype=np.uint8)
    write_container(path, tensors)


def load_checkpoint(path: str | Path) -> Transformer:
    tensors = read_container(path)
    if CONFIG_KEY not in tensors:
        raise CheckpointError(f"{path}: missing {CONFIG_KEY} entry")
    try:
        config = ModelConfig(**json.loads(tensors.pop(CONFIG_KEY).tobytes()))
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad model config: {exc}") from exc
    weights: dict[str, np.ndarray] = {}
    for name in weight_names(config):
        if name not in tensors:
            raise CheckpointError(f"{path}: missing weight {name!r}")
        arr = tensors[name]
        expected = _weight_shape(name, config)
        if arr.shape != expected:
            raise CheckpointError(
                f"{path}: {name!r} has shape {arr.shape}, expected {expected}"
            )
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"{path}: non-finite values in {name!r}")
        weights[name] = arr
    return Transformer(config, weights)
