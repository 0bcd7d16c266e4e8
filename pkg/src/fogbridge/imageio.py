"""Binary PPM/PGM (P6/P5, 8-bit) reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _header(magic: str, w: int, h: int, comment: str | None) -> bytes:
    note = "" if comment is None else f"# {comment}\n"
    return f"{magic}\n{note}{w} {h}\n255\n".encode()


def write_ppm(path, rgb: np.ndarray, comment: str | None = None) -> None:
    """``rgb`` is 3xHxW in [0, 1]."""
    img = to_u8(rgb).transpose(1, 2, 0)
    h, w, _ = img.shape
    Path(path).write_bytes(_header("P6", w, h, comment) + img.tobytes())


def write_pgm(path, gray: np.ndarray, comment: str | None = None) -> None:
    img = to_u8(gray)
    h, w = img.shape
    Path(path).write_bytes(_header("P5", w, h, comment) + img.tobytes())


def _read_netpbm(path, magic: bytes) -> tuple[np.ndarray, int, int]:
    blob = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic!r}, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit images supported")
    return np.frombuffer(blob, dtype=np.uint8, offset=pos + 1), h, w


def read_ppm(path) -> np.ndarray:
    data, h, w = _read_netpbm(path, b"P6")
    return (data[: h * w * 3].reshape(h, w, 3).transpose(2, 0, 1) / np.float32(255.0)).astype(np.float32)


def read_pgm(path) -> np.ndarray:
    data, h, w = _read_netpbm(path, b"P5")
    return (data[: h * w].reshape(h, w) / np.float32(255.0)).astype(np.float32)


def quantize(x: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid exactly as ``read_ppm`` reconstructs it."""
    return (to_u8(x) / np.float32(255.0)).astype(np.float32)
