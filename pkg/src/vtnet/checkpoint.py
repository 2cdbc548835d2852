"""Binary checkpoints: every parameter and running statistic, plus config.

Layout (all integers little-endian):
  magic "VTCK" | u32 version=1 | u32 tensor count
  per tensor: u16 name length | name bytes (UTF-8) | u8 dtype code
              (0 = float32, 1 = float64) | u8 rank | u32 per dimension |
              raw little-endian scalars
  trailer: u32 config length | config JSON (UTF-8)

Writes are deterministic (tensors in model definition order), so a
save/load/save round trip is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .models import build_from_config

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

MAGIC = b"VTCK"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    """Corrupt, truncated, or inconsistent checkpoint file."""


def _entries(model):
    for name, tensor in model.named_params():
        yield name, tensor.data
    for name, buf in model.named_buffers():
        yield name, buf


def save_checkpoint(model, path):
    """Write all parameters, running stats, and the model config."""
    entries = list(_entries(model))
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(entries))
    for name, arr in entries:
        encoded = name.encode("utf-8")
        code = _DTYPE_CODES[arr.dtype]
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<BB", code, arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes()
    config = json.dumps(model.config_dict(), sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(config))
    blob += config
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """Parse a checkpoint into (tensors dict, config dict)."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    version, count = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, rank = reader.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {name}")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        dtype = _CODE_DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = reader.take(n * dtype.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    (cfg_len,) = reader.unpack("<I")
    config = json.loads(reader.take(cfg_len).decode("utf-8"))
    if reader.pos != len(reader.data):
        raise CheckpointError("trailing bytes after config block")
    return tensors, config


def load_checkpoint(path):
    """Rebuild the model recorded at ``path`` with its exact weights."""
    tensors, config = read_checkpoint(path)
    model = build_from_config(config)
    expected = dict(_entries(model))
    if set(expected) != set(tensors):
        missing = set(expected) ^ set(tensors)
        raise CheckpointError(f"checkpoint/model tensor names differ: {sorted(missing)[:5]}")
    for name, tensor in model.named_params():
        stored = tensors[name]
        if stored.shape != tensor.data.shape:
            raise CheckpointError(f"{name}: shape {stored.shape} != {tensor.data.shape}")
        tensor.data = stored.astype(tensor.data.dtype)
    for name, buf in model.named_buffers():
        stored = tensors[name]
        if stored.shape != buf.shape:
            raise CheckpointError(f"{name}: shape {stored.shape} != {buf.shape}")
        buf[...] = stored
    return model
