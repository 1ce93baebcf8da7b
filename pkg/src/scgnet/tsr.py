"""TSR v1 tensor files.

Layout: ``b"TSR1"``, u8 dtype code (1 = f32, 2 = f64), u8 rank, rank x u64
little-endian extents, then the row-major little-endian payload.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TSR1"
DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class CorruptFileError(ValueError):
    pass


def dumps(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    if arr.dtype.kind != "f":
        arr = arr.astype("<f8")
    arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    code = DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}; TSR v1 stores f32 or f64")
    if arr.ndim > 255:
        raise ValueError("rank exceeds 255")
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def loads(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; return it and the end offset."""
    if buf[offset:offset + 4] != MAGIC:
        raise CorruptFileError("bad TSR magic")
    if len(buf) < offset + 6:
        raise CorruptFileError("truncated TSR header")
    code, rank = struct.unpack_from("<BB", buf, offset + 4)
    if code not in CODE_DTYPES:
        raise CorruptFileError(f"unknown TSR dtype code {code}")
    pos = offset + 6
    if len(buf) < pos + 8 * rank:
        raise CorruptFileError("truncated TSR extents")
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise CorruptFileError("truncated TSR payload")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
    return arr, pos + nbytes


def save(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(array))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = loads(buf)
    if end != len(buf):
        raise CorruptFileError(f"{len(buf) - end} trailing bytes after TSR payload")
    return arr
