"""Binary tensor dumps used for golden fixtures and scene exports.

Layout: 8-byte magic ``FSDTENSR``, little-endian u32 rank, ``rank`` u32
extents, then row-major little-endian float32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"FSDTENSR"

PathLike = Union[str, Path]


def encode(array) -> bytes:
    arr = np.asarray(array)
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode(blob: bytes) -> np.ndarray:
    if blob[:8] != MAGIC:
        raise ValueError("not a tensor dump: bad magic")
    (rank,) = struct.unpack_from("<I", blob, 8)
    shape = struct.unpack_from(f"<{rank}I", blob, 12)
    offset = 12 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(blob) != offset + 4 * count:
        raise ValueError(f"tensor dump truncated: expected {offset + 4 * count} bytes, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float64)


def save(path: PathLike, array) -> None:
    Path(path).write_bytes(encode(array))


def load(path: PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes())
