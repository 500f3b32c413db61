"""Flat binary checkpoint format for named float64 arrays.

Layout: magic "SFMC0001", then per entry (sorted by name for canonical bytes):
name length (u32 LE), UTF-8 name, rank (u32 LE), extents (u32 LE each),
values (f64 LE, row-major).
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ConfigError, ShapeMismatch
from .tensor import Tensor

MAGIC = b"SFMC0001"


def save_checkpoint(path, arrays):
    """Write a dict of name -> ndarray/Tensor; entries are sorted by name."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name in sorted(arrays):
            a = arrays[name]
            v = a.values if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", v.ndim))
            for e in v.shape:
                f.write(struct.pack("<I", e))
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read back a dict of name -> float64 ndarray."""
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file (bad magic)")
    out = {}
    pos = len(MAGIC)
    while pos < len(data):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        vals = np.frombuffer(data, dtype="<f8", count=count, offset=pos).copy()
        pos += 8 * count
        out[name] = vals.reshape(shape)
    return out


def load_into(path, params):
    """Load a checkpoint into existing tensors, validating names and shapes exactly."""
    loaded = load_checkpoint(path)
    expected = set(params)
    got = set(loaded)
    if expected != got:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise ConfigError(f"{path}: name mismatch (missing={missing}, unexpected={extra})")
    for name, p in params.items():
        v = loaded[name]
        if v.shape != p.values.shape:
            raise ShapeMismatch(f"{path}: '{name}' has shape {v.shape}, expected {p.values.shape}")
        p.values = v
    return params
