"""Binary tensor records: b"HYMT", u32 version, u32 rank, u64 extents, f64 payload (little-endian)."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"HYMT"
VERSION = 1


class FormatError(ValueError):
    pass


def write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    arr = np.require(np.asarray(arr, dtype="<f8"), requirements="C")
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated tensor record: wanted {n} bytes, got {len(buf)}")
    return buf


def read_array(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4)
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    version, rank = struct.unpack("<II", _read_exact(fh, 8))
    if version != VERSION:
        raise FormatError(f"unsupported tensor version {version} (expected {VERSION})")
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
    return data.astype(np.float64).reshape(shape)
