"""KTEN tensor files and PGM image export.

KTEN layout, all integers little-endian:

    bytes 0-3   magic "KTEN"
    byte  4     format version (0x01)
    byte  5     dtype: 0x01 = float32, 0x02 = float64
    byte  6     rank
    next        rank x uint64 dimensions
    rest        row-major payload, little-endian floats

Round-trips are bit-exact; readers reject bad magic, unknown versions and
truncated payloads.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ShapeError

_MAGIC = b"KTEN"
_VERSION = 0x01
_DTYPE_CODES = {np.dtype(np.float32): 0x01, np.dtype(np.float64): 0x02}
_CODE_DTYPES = {0x01: np.dtype("<f4"), 0x02: np.dtype("<f8")}


def write_kten(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr) if arr.ndim else np.asarray(arr)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ShapeError(f"KTEN supports float32/float64, got {arr.dtype}")
    if arr.ndim > 255:
        raise ShapeError(f"KTEN rank limit exceeded: {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BB", _VERSION, code))
        fh.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack("<Q", d))
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_kten(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(7)
        if len(head) < 7 or head[:4] != _MAGIC:
            raise OSError(f"{path}: not a KTEN file")
        version, code, rank = head[4], head[5], head[6]
        if version != _VERSION:
            raise OSError(f"{path}: unsupported KTEN version {version}")
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise OSError(f"{path}: unknown dtype code {code:#x}")
        dim_bytes = fh.read(8 * rank)
        if len(dim_bytes) != 8 * rank:
            raise OSError(f"{path}: truncated KTEN header")
        shape = struct.unpack(f"<{rank}Q", dim_bytes) if rank else ()
        count = 1
        for d in shape:
            count *= d
        payload = fh.read(count * dtype.itemsize + 1)
        if len(payload) != count * dtype.itemsize:
            raise OSError(f"{path}: payload size mismatch "
                          f"(expected {count * dtype.itemsize} bytes, got {len(payload)})")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(arr.dtype.newbyteorder("="))


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    """Binary PGM (P5). maxval 1 writes a bilevel image from 0/1 data;
    otherwise values are expected in [0, 1] and quantized to maxval steps."""
    if image.ndim != 2:
        raise ShapeError(f"PGM needs a 2-D image, got shape {image.shape}")
    if not 1 <= maxval <= 255:
        raise ShapeError(f"PGM maxval must be in [1, 255], got {maxval}")
    if maxval == 1:
        data = (image > 0.5).astype(np.uint8)
    else:
        data = np.clip(np.rint(image * maxval), 0, maxval).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())
