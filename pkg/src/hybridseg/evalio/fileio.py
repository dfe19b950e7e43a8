"""HDT tensor files and 8-bit PGM export.

HDT layout (little-endian): magic ``HDT1``, u8 dtype code, u32 rank,
``rank`` u32 dims, then the raw C-order payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"HDT1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


class HDTError(ValueError):
    pass


def hdt_encode(array) -> bytes:
    a = np.asarray(array)
    code = CODES.get(a.dtype.newbyteorder("="))
    if code is None:
        raise HDTError(f"unsupported dtype {a.dtype}; use float32, float64 or uint8")
    header = MAGIC + struct.pack("<BI", code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes()


def hdt_decode(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; return it and the offset just past it."""
    if buf[offset : offset + 4] != MAGIC:
        raise HDTError("bad magic, not an HDT tensor")
    if len(buf) < offset + 9:
        raise HDTError("truncated header")
    code, rank = struct.unpack_from("<BI", buf, offset + 4)
    if code not in DTYPES:
        raise HDTError(f"unknown dtype code {code}")
    pos = offset + 9
    if len(buf) < pos + 4 * rank:
        raise HDTError("truncated shape")
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    dtype = DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise HDTError(f"truncated payload: need {nbytes} bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def hdt_write(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(hdt_encode(array))


def hdt_read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = hdt_decode(buf)
    if end != len(buf):
        raise HDTError(f"{len(buf) - end} trailing bytes after tensor")
    return arr


def _write_pgm(path, img: np.ndarray) -> None:
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def to_uint8(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.size and set(np.unique(a)) <= {0.0, 1.0}:
        return (a * 255).astype(np.uint8)
    lo, hi = float(a.min()), float(a.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    return np.round((a - lo) * scale).astype(np.uint8)


def pgm_export(array, path) -> list[str]:
    """Write an (H, W) array as one PGM, or an (H, W, C) array as one PGM per channel.

    Binary masks map to 0/255; other arrays are min-max scaled.  Returns the
    written paths; per-channel files get a ``_c{i}`` suffix.
    """
    a = np.asarray(array)
    if a.ndim == 2:
        _write_pgm(path, to_uint8(a))
        return [str(path)]
    if a.ndim != 3:
        raise ValueError(f"pgm_export expects rank 2 or 3, got {a.ndim}")
    root, ext = os.path.splitext(str(path))
    paths = []
    for c in range(a.shape[-1]):
        p = f"{root}_c{c}{ext or '.pgm'}"
        _write_pgm(p, to_uint8(a[..., c]))
        paths.append(p)
    return paths


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise ValueError("only 8-bit binary PGM (P5) is supported")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
