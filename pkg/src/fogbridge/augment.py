"""Source-domain augmentations that mimic adverse-weather sensor degradation.

Lidar: points dropout, range noise and near-range backscatter clutter.
Camera: hue/saturation/contrast jitter. Both: one paired flip/scale/translate
draw applied to every raster and to the boxes.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .entropy import luma
from .sample import Sample


@dataclass(frozen=True)
class AugmentConfig:
    p_dropout_max: float = 0.4
    noise_sigma_frac: float = 0.01
    p_backscatter: float = 0.1
    backscatter_depth_frac: float = 0.2
    hue_delta: float = 0.1           # turns
    saturation_delta: float = 0.4    # factor drawn from [1 - d, 1 + d]
    contrast_delta: float = 0.4
    flip_prob: float = 0.5
    scale_delta: float = 0.1
    translate_frac: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("p_dropout_max", "p_backscatter", "flip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.backscatter_depth_frac <= 1.0:
            raise ValueError(f"backscatter_depth_frac must lie in (0, 1], got {self.backscatter_depth_frac}")
        if self.noise_sigma_frac < 0:
            raise ValueError("noise_sigma_frac must be non-negative")


# -- lidar ---------------------------------------------------------------------

def points_dropout(depth: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                   p_max: float = 0.4, p: float | None = None):
    """Invalidate each valid return with a per-sample rate drawn from U[0, p_max].

    ``p`` forces the rate (test hook).
    """
    rate = rng.uniform(0.0, p_max) if p is None else p
    drop = mask & (rng.random(mask.shape) < rate)
    depth = np.where(drop, 0.0, depth).astype(depth.dtype)
    return depth, mask & ~drop


def depth_noise(depth: np.ndarray, mask: np.ndarray, d_max: float, rng: np.random.Generator,
                sigma_frac: float = 0.01) -> np.ndarray:
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    noise = rng.normal(0.0, sigma_frac * d_max, size=depth.shape)
    noisy = np.clip(depth + noise, 0.0, d_max)
    # a valid return must stay distinguishable from the "no return" sentinel
    noisy = np.maximum(noisy, 1e-3)
    return np.where(mask, noisy, depth).astype(depth.dtype)


def backscatter(depth: np.ndarray, mask: np.ndarray, d_max: float, rng: np.random.Generator,
                p: float = 0.1, depth_frac: float = 0.2):
    """Turn empty rays into near-range clutter returns with depth in (0, depth_frac * d_max)."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    add = ~mask & (rng.random(mask.shape) < p)
    limit = depth_frac * d_max
    vals = rng.uniform(0.0, limit, size=int(add.sum()))
    # keep strictly inside the open interval after the float32 cast
    vals = np.clip(vals, 1e-3, np.nextafter(np.float32(limit), np.float32(0)))
    depth = depth.copy()
    depth[add] = vals
    return depth, mask | add


# -- camera --------------------------------------------------------------------

def _hue_rotation_matrix(turns: float) -> np.ndarray:
    """Rotation about the grey axis (1,1,1)/sqrt(3)."""
    a = 2.0 * np.pi * turns
    c, s = np.cos(a), np.sin(a)
    k = np.ones((3, 3)) / 3.0
    cross = np.array([[0, -1, 1], [1, 0, -1], [-1, 1, 0]]) / np.sqrt(3.0)
    return c * np.eye(3) + (1 - c) * k + s * cross


def adjust_hue(rgb: np.ndarray, turns: float) -> np.ndarray:
    grey = rgb.mean(axis=0, keepdims=True)
    chroma = rgb - grey
    return grey + np.einsum("ij,jhw->ihw", _hue_rotation_matrix(turns), chroma)


def adjust_saturation(rgb: np.ndarray, factor: float) -> np.ndarray:
    y = luma(rgb)[None]
    return y + factor * (rgb - y)


def adjust_contrast(rgb: np.ndarray, factor: float) -> np.ndarray:
    m = luma(rgb).mean()
    return m + factor * (rgb - m)


def rgb_jitter(rgb: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    out = rgb.astype(np.float64)
    hue = rng.uniform(-cfg.hue_delta, cfg.hue_delta)
    sat = rng.uniform(1 - cfg.saturation_delta, 1 + cfg.saturation_delta)
    con = rng.uniform(1 - cfg.contrast_delta, 1 + cfg.contrast_delta)
    if hue != 0.0:
        out = adjust_hue(out, hue)
    if sat != 1.0:
        out = adjust_saturation(out, sat)
    if con != 1.0:
        out = adjust_contrast(out, con)
    return np.clip(out, 0.0, 1.0).astype(rgb.dtype)


# -- paired geometry -------------------------------------------------------------

@dataclass(frozen=True)
class GeometricDraw:
    flip: bool = False
    scale: float = 1.0
    tx: int = 0
    ty: int = 0

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.scale == 1.0 and self.tx == 0 and self.ty == 0


def draw_geometric(rng: np.random.Generator, width: int, height: int,
                   cfg: AugmentConfig = AugmentConfig()) -> GeometricDraw:
    flip = bool(rng.random() < cfg.flip_prob)
    scale = float(rng.uniform(1 - cfg.scale_delta, 1 + cfg.scale_delta))
    tx = int(np.rint(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * width))
    ty = int(np.rint(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * height))
    return GeometricDraw(flip, scale, tx, ty)


def _source_index(n: int, scale: float, shift: int, flip: bool) -> np.ndarray:
    """Nearest source coordinate for every output pixel along one axis (-1 = outside)."""
    centre = n / 2.0
    out = np.arange(n) + 0.5 - shift
    src = (out - centre) / scale + centre
    if flip:
        src = n - src
    idx = np.floor(src).astype(np.int64)
    return np.where((idx >= 0) & (idx < n), idx, -1)


def warp_raster(raster: np.ndarray, draw: GeometricDraw, fill=0) -> np.ndarray:
    """Apply a draw to an (...,H,W) raster with nearest-neighbour resampling."""
    h, w = raster.shape[-2:]
    if draw.is_identity:
        return raster.copy()
    ys = _source_index(h, draw.scale, draw.ty, False)
    xs = _source_index(w, draw.scale, draw.tx, draw.flip)
    out = raster[..., np.maximum(ys, 0)[:, None], np.maximum(xs, 0)[None, :]]
    outside = (ys < 0)[:, None] | (xs < 0)[None, :]
    out[..., outside] = fill
    return out


def warp_boxes(boxes: np.ndarray, classes: np.ndarray, draw: GeometricDraw, width: int, height: int,
               min_size: float = 1.0):
    if not len(boxes) or draw.is_identity:
        return boxes.copy(), classes.copy()
    b = boxes.astype(np.float64).copy()
    if draw.flip:
        b[:, [0, 2]] = width - b[:, [2, 0]]
    cx, cy = width / 2.0, height / 2.0
    b[:, [0, 2]] = (b[:, [0, 2]] - cx) * draw.scale + cx + draw.tx
    b[:, [1, 3]] = (b[:, [1, 3]] - cy) * draw.scale + cy + draw.ty
    b[:, [0, 2]] = np.clip(b[:, [0, 2]], 0, width)
    b[:, [1, 3]] = np.clip(b[:, [1, 3]], 0, height)
    keep = ((b[:, 2] - b[:, 0]) >= min_size) & ((b[:, 3] - b[:, 1]) >= min_size)
    return b[keep].astype(boxes.dtype), classes[keep].copy()


def paired_geometric(sample: Sample, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig(),
                     draw: GeometricDraw | None = None) -> Sample:
    """One flip/scale/translate draw applied to rgb, depth, mask and boxes.

    Entropy maps are dropped; recompute them on the warped rasters.
    """
    if draw is None:
        draw = draw_geometric(rng, sample.width, sample.height, cfg)
    boxes, classes = warp_boxes(sample.boxes, sample.classes, draw, sample.width, sample.height)
    return replace(sample,
                   rgb=warp_raster(sample.rgb, draw),
                   depth=warp_raster(sample.depth, draw),
                   valid_mask=warp_raster(sample.valid_mask, draw, fill=False),
                   boxes=boxes, classes=classes, e_rgb=None, e_depth=None, e_max=None)


# -- full pipelines ------------------------------------------------------------------

def augment_source(sample: Sample, rng: np.random.Generator, d_max: float,
                   cfg: AugmentConfig = AugmentConfig()) -> Sample:
    """All source-domain augmentations, then fresh entropy maps."""
    depth, mask = points_dropout(sample.depth, sample.valid_mask, rng, cfg.p_dropout_max)
    depth = depth_noise(depth, mask, d_max, rng, cfg.noise_sigma_frac)
    depth, mask = backscatter(depth, mask, d_max, rng, cfg.p_backscatter, cfg.backscatter_depth_frac)
    rgb = rgb_jitter(sample.rgb, rng, cfg)
    out = replace(sample, rgb=rgb, depth=depth, valid_mask=mask)
    out = paired_geometric(out, rng, cfg)
    return out.with_entropy(d_max)


def augment_geometric_only(sample: Sample, rng: np.random.Generator, d_max: float,
                           cfg: AugmentConfig = AugmentConfig()) -> Sample:
    return paired_geometric(sample, rng, cfg).with_entropy(d_max)
