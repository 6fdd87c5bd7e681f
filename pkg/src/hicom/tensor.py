"""Tensor container I/O and seeded random state.

Tensors are plain ``numpy.ndarray`` objects of rank 1-4. The on-disk
container is::

    b"HICT" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u16 rank
    | rank x u64 extents | row-major payload

All integers and the payload are little-endian.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"HICT"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

# PCG64 through numpy's Generator; the stream is platform independent.
RNG_ALGORITHM = "numpy.PCG64"

PathLike = Union[str, Path]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def resolve_dtype(name: str | np.dtype) -> np.dtype:
    dt = np.dtype(name)
    if dt not in _DTYPE_CODES:
        raise FormatError(f"unsupported dtype {dt}; use float32 or float64")
    return dt


def check_tensor(x: np.ndarray) -> np.ndarray:
    """Validate rank and extents; return ``x`` unchanged."""
    if not 1 <= x.ndim <= 4:
        raise ShapeError(f"tensor rank must be 1..4, got {x.ndim}")
    if any(n < 1 for n in x.shape):
        raise ShapeError(f"all extents must be >= 1, got {x.shape}")
    return x


def write_tensor(fh: BinaryIO, x: np.ndarray) -> None:
    x = check_tensor(np.asarray(x))
    code = _DTYPE_CODES.get(x.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {x.dtype}")
    fh.write(MAGIC)
    fh.write(struct.pack("<BBH", VERSION, code, x.ndim))
    fh.write(struct.pack(f"<{x.ndim}Q", *x.shape))
    fh.write(np.ascontiguousarray(x, dtype=_CODE_DTYPES[code]).tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    head = fh.read(8)
    if len(head) < 8 or head[:4] != MAGIC:
        raise FormatError("bad magic; not a HICT container")
    version, code, rank = struct.unpack("<BBH", head[4:])
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if not 1 <= rank <= 4:
        raise FormatError(f"rank {rank} out of range")
    raw = fh.read(8 * rank)
    if len(raw) < 8 * rank:
        raise FormatError("truncated header")
    shape = struct.unpack(f"<{rank}Q", raw)
    if any(n < 1 for n in shape):
        raise FormatError(f"zero extent in {shape}")
    dtype = _CODE_DTYPES[code]
    nbytes = int(np.prod(shape)) * dtype.itemsize
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError("truncated payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def to_bytes(x: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, x)
    return buf.getvalue()


def from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))


def save_tensor(path: PathLike, x: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, x)


def load_tensor(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
