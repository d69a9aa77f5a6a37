"""Binary parameter container.

Layout, all integers little-endian:

    magic   8 bytes  b"SSTCKPT1"
    count   u32      number of parameter records
    record  repeated:
        name_len  u32
        name      utf-8 bytes
        rank      u32
        extents   u64 * rank
        payload   float64 little-endian, C order

Payloads are always written as float64; float32 parameters round-trip
bit-exactly because every float32 value is exactly representable.
"""
from __future__ import annotations

import io
import struct
from typing import Mapping

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"SSTCKPT1"


def _as_array(v) -> np.ndarray:
    if isinstance(v, Tensor):
        return v.data
    return np.asarray(v)


def save_checkpoint(params: Mapping[str, "Tensor | np.ndarray"], path) -> None:
    """Write parameters in insertion order; order is part of the byte layout."""
    blob = checkpoint_bytes(params)
    with open(path, "wb") as fh:
        fh.write(blob)


def checkpoint_bytes(params: Mapping[str, "Tensor | np.ndarray"]) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", len(params)))
    for name, value in params.items():
        # asarray keeps rank 0; ascontiguousarray would promote it to rank 1
        arr = np.asarray(_as_array(value), dtype=np.float64, order="C")
        nm = name.encode("utf-8")
        out.write(struct.pack("<I", len(nm)))
        out.write(nm)
        out.write(struct.pack("<I", arr.ndim))
        for ext in arr.shape:
            out.write(struct.pack("<Q", ext))
        out.write(arr.astype("<f8", copy=False).tobytes(order="C"))
    return out.getvalue()


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    return checkpoint_from_bytes(blob)


def checkpoint_from_bytes(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise DataError(f"bad checkpoint magic {blob[:8]!r}")
    off = 8

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise DataError("truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (count,) = take("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if off + name_len > len(blob):
            raise DataError("truncated checkpoint")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = take("<I")
        shape = tuple(take("<" + "Q" * rank)) if rank else ()
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if off + nbytes > len(blob):
            raise DataError("truncated checkpoint")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += nbytes
        params[name] = arr.copy()
    if off != len(blob):
        raise DataError(f"{len(blob) - off} trailing bytes after last record")
    return params
