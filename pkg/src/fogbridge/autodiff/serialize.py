"""MDT1 tensor files: magic, u32 rank, u32 dims, row-major float32, all little-endian."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MDT1"


def dumps(array) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def loads(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise ValueError(f"not an MDT1 blob (magic {blob[:4]!r})")
    (rank,) = struct.unpack_from("<I", blob, 4)
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    expected = offset + 4 * count
    if len(blob) != expected:
        raise ValueError(f"MDT1 payload has {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32)


def save(path, array) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
