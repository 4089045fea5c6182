"""
Raw Tensor File (RTF) codec

Layout: magic b"RTF1", u8 dtype code (0 = float64, 1 = float32), u8 rank,
rank x u64 little-endian extents, then the payload little-endian row-major.
"""
import struct
from pathlib import Path
from typing import Tuple

import numpy as np

MAGIC = b"RTF1"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class RTFError(ValueError):
    """Malformed or truncated RTF data"""


def encode(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    code = _CODES.get(array.dtype)
    if code is None:
        raise RTFError(f"RTF stores float64 or float32, got {array.dtype}")
    if array.ndim > 255:
        raise RTFError(f"rank {array.ndim} exceeds the u8 rank field")
    header = MAGIC + struct.pack("<BB", code, array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()


def decode(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Decode one array starting at `offset`; returns the array and the offset just past it"""
    view = memoryview(buffer)
    if len(view) - offset < 6:
        raise RTFError(f"truncated RTF header at offset {offset}")
    if bytes(view[offset:offset + 4]) != MAGIC:
        raise RTFError(f"bad RTF magic {bytes(view[offset:offset + 4])!r} at offset {offset}")
    code, rank = struct.unpack_from("<BB", view, offset + 4)
    if code not in _DTYPES:
        raise RTFError(f"unknown RTF dtype code {code}")
    cursor = offset + 6
    if len(view) - cursor < 8 * rank:
        raise RTFError("truncated RTF extents")
    shape = struct.unpack_from(f"<{rank}Q", view, cursor)
    cursor += 8 * rank
    dtype = _DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(view) - cursor < nbytes:
        raise RTFError(f"truncated RTF payload: need {nbytes} bytes, have {len(view) - cursor}")
    array = np.frombuffer(view[cursor:cursor + nbytes], dtype=dtype).reshape(shape)
    return array.astype(dtype.newbyteorder("="), copy=True), cursor + nbytes


def save(path, array: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode(array))
    return path


def load(path) -> np.ndarray:
    data = Path(path).read_bytes()
    array, end = decode(data)
    if end != len(data):
        raise RTFError(f"{path}: {len(data) - end} trailing bytes after the tensor")
    return array
