"""Local measurement entropy maps and their fusion.

A pixel's entropy is the Shannon entropy (bits) of the histogram of valid
values in its ``window x window`` neighbourhood, divided by ``log2(bins)`` so
that maps live in [0, 1]. Edges, corners and object boundaries score high;
flat background scores low.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

DEPTH_BINS = 16
RGB_BINS = 32
WINDOW = 9


def luma(rgb: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of a 3xHxW raster."""
    return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]


def bin_indices(raster: np.ndarray, bins: int) -> np.ndarray:
    return np.clip((np.asarray(raster, dtype=np.float64) * bins).astype(np.int64), 0, bins - 1)


def _box_sum(counts: np.ndarray, window: int) -> np.ndarray:
    """Sum over every window x window block of the trailing two axes (valid mode).

    Separable running sums, in int16 whenever the largest partial sum fits.
    """
    h, w = counts.shape[-2:]
    dtype = np.int16 if max(h, window * w) <= np.iinfo(np.int16).max else np.int64
    c = np.cumsum(counts, axis=-2, dtype=dtype)
    rows = c[..., window - 1:, :].copy()
    rows[..., 1:, :] -= c[..., :-window, :]
    c = np.cumsum(rows, axis=-1, dtype=dtype)
    out = c[..., window - 1:].copy()
    out[..., 1:] -= c[..., :-window]
    return out


@lru_cache(maxsize=8)
def _clogc_table(n: int) -> np.ndarray:
    c = np.arange(n + 1, dtype=np.float64)
    c[0] = 1.0
    t = c * np.log2(c)
    t[0] = 0.0
    return t


def local_entropy(raster: np.ndarray, valid_mask: np.ndarray | None = None,
                  window: int = WINDOW, bins: int = DEPTH_BINS) -> np.ndarray:
    """Normalized sliding-window Shannon entropy with reflection padding.

    ``raster`` must already be scaled to [0, 1]. Windows without any valid
    sample map to 0.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise ValueError(f"expected a single-channel HxW raster, got shape {raster.shape}")
    mask = np.ones(raster.shape, dtype=bool) if valid_mask is None else np.asarray(valid_mask, dtype=bool)
    if mask.shape != raster.shape:
        raise ValueError(f"mask shape {mask.shape} != raster shape {raster.shape}")
    r = window // 2
    h, w = raster.shape
    if h <= r or w <= r:
        raise ValueError(f"raster {h}x{w} too small for reflection padding of window {window}")

    idx = np.pad(bin_indices(raster, bins), r, mode="reflect")
    valid = np.pad(mask, r, mode="reflect")
    onehot = np.zeros((bins,) + idx.shape, dtype=np.uint8)
    np.put_along_axis(onehot, idx[None], 1, axis=0)
    onehot &= valid[None]
    counts = _box_sum(onehot, window)
    total = counts.sum(axis=0)
    # H = log2(n) - sum(c log2 c) / n, with c log2 c tabulated for every possible count
    clogc = _clogc_table(window * window)
    s = clogc[counts].sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = (np.log2(total) - s / total) / np.log2(bins)
    ent[total == 0] = 0.0
    return np.clip(ent, 0.0, 1.0)


def rgb_entropy(rgb: np.ndarray, window: int = WINDOW, bins: int = RGB_BINS) -> np.ndarray:
    return local_entropy(luma(rgb), None, window, bins)


def depth_entropy(depth: np.ndarray, mask: np.ndarray, d_max: float,
                  window: int = WINDOW, bins: int = DEPTH_BINS) -> np.ndarray:
    return local_entropy(np.clip(depth / d_max, 0.0, 1.0), mask, window, bins)


def max_fusion(e_rgb: np.ndarray, e_depth: np.ndarray) -> np.ndarray:
    """Per-pixel maximum of the RGB and depth entropy maps."""
    e_rgb, e_depth = np.asarray(e_rgb), np.asarray(e_depth)
    if e_rgb.shape != e_depth.shape:
        raise ValueError(f"entropy map dims differ: {e_rgb.shape} vs {e_depth.shape}")
    return np.maximum(e_rgb, e_depth)


def downscale_entropy(e: np.ndarray, factor: int) -> np.ndarray:
    """Block-average an entropy map (or a stack of them) by an integer factor."""
    e = np.asarray(e)
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = e.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"entropy map {h}x{w} not divisible by factor {factor}")
    if factor == 1:
        return e.copy()
    lead = e.shape[:-2]
    return e.reshape(lead + (h // factor, factor, w // factor, factor)).mean(axis=(-3, -1))


def entropy_maps(rgb: np.ndarray, depth: np.ndarray, mask: np.ndarray, d_max: float) -> tuple:
    """(e_rgb, e_depth, e_max) for one frame."""
    e_rgb = rgb_entropy(rgb)
    e_depth = depth_entropy(depth, mask, d_max)
    return e_rgb, e_depth, max_fusion(e_rgb, e_depth)
