"""PIPT binary tensor dumps.

Layout: ``b"PIPT"``, version u16, rank u16, ``rank`` extents as u64, dtype
tag u8 (0 = f32, 1 = f64), then the row-major payload.  Everything is
little-endian.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PIPT"
VERSION = 1
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def dumps_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _TAGS:
        raise TypeError(f"PIPT supports float32/float64, got {arr.dtype}")
    tag = _TAGS[arr.dtype]
    head = MAGIC + struct.pack("<HH", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape) + struct.pack("<B", tag)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()


def loads_tensor(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ValueError("not a PIPT tensor (bad magic)")
    version, rank = struct.unpack_from("<HH", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported PIPT version {version}")
    off = 8
    shape = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    (tag,) = struct.unpack_from("<B", buf, off)
    off += 1
    if tag not in _DTYPES:
        raise ValueError(f"unknown dtype tag {tag}")
    dt = _DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) - off != count * dt.itemsize:
        raise ValueError("payload length does not match extents")
    return np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(shape).astype(dt.newbyteorder("="))


def save_tensor(path, arr):
    Path(path).write_bytes(dumps_tensor(arr))


def load_tensor(path):
    return loads_tensor(Path(path).read_bytes())
