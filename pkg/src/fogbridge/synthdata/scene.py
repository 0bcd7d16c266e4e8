"""Procedural clear-weather scenes: sky, ground plane and up to a handful of
non-overlapping objects, one shape family per class, observed by a camera and
a scanning lidar that share the same pinhole model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imageio import quantize
from ..sample import Sample
from .projection import Intrinsics, backproject, project_pointcloud


@dataclass(frozen=True)
class SceneConfig:
    height: int = 96
    width: int = 96
    d_max: float = 50.0
    min_objects: int = 1
    max_objects: int = 6
    focal: float = 60.0
    horizon: float = 0.35          # optical-axis row as a fraction of the height
    camera_height: float = 1.6     # metres above ground
    lidar_row_step: int = 3
    lidar_col_step: int = 2

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.focal, self.focal, self.width / 2.0, float(int(self.height * self.horizon)))


# (min_w, max_w, min_h, max_h) in pixels per class: car, pedestrian, ridable vehicle
SIZE_RANGES = ((18, 34, 10, 18), (6, 10, 14, 26), (12, 22, 12, 20))


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    k = (np.array([5.0, 3.0, 1.0]) + h * 6.0) % 6.0
    return v - v * s * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)


def _shape_mask(cls: int, w: int, h: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    if cls == 0:
        return np.ones((h, w), dtype=bool)
    if cls == 1:
        return ((xs - w / 2) / (w / 2)) ** 2 + ((ys - h / 2) / (h / 2)) ** 2 <= 1.0
    half = (w / 2) * ys / h
    mask = np.abs(xs - w / 2) <= half
    # the apex row must hold at least one pixel for a tight box of height h
    mask[0, w // 2] = True
    return mask


def _texture(cls: int, w: int, h: int, color: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    tex = np.broadcast_to(color[:, None, None], (3, h, w)).copy()
    if cls == 0:
        tex[:, : max(1, int(0.35 * h))] *= 0.55       # window band
        tex[:, -2:, :] *= 0.4                          # wheels / shadow
    elif cls == 1:
        tex[:, h // 2:] *= 0.7                         # legs
    else:
        tex[:, :, ::3] *= 0.75                         # frame bars
    return tex + rng.normal(0.0, 0.02, size=tex.shape)


def _background(cfg: SceneConfig, cy: float, rng: np.random.Generator) -> np.ndarray:
    h, w = cfg.height, cfg.width
    rows = np.arange(h, dtype=np.float64)[:, None] + 0.5
    sky_t = np.clip(rows / max(cy, 1.0), 0, 1)[..., None]
    sky = (1 - sky_t) * np.array([0.50, 0.65, 0.85]) + sky_t * np.array([0.82, 0.85, 0.88])
    ground_t = np.clip((rows - cy) / (h - cy), 0, 1)[..., None]
    tint = rng.uniform(-0.05, 0.05, size=3)
    ground = (1 - ground_t) * (np.array([0.50, 0.48, 0.44]) + tint) + ground_t * (np.array([0.30, 0.29, 0.27]) + tint)
    img = np.where(rows[..., None] < cy, sky, ground)
    img = np.broadcast_to(img, (h, w, 3)).transpose(2, 0, 1).copy()
    img *= rng.uniform(0.9, 1.05)
    return img + rng.normal(0.0, 0.015, size=img.shape)


def ground_depth(v: np.ndarray, cfg: SceneConfig) -> np.ndarray:
    """Depth of the ground plane seen through pixel row coordinate ``v`` (inf above the horizon)."""
    fy, cy = cfg.intrinsics.fy, cfg.intrinsics.cy
    dv = np.asarray(v, dtype=np.float64) - cy
    with np.errstate(divide="ignore"):
        return np.where(dv > 0, fy * cfg.camera_height / dv, np.inf)


def render_scene(rng: np.random.Generator, cfg: SceneConfig = SceneConfig()):
    """Returns (sample, instance map); instance ``i + 1`` marks the pixels of object ``i``."""
    h, w = cfg.height, cfg.width
    intr = cfg.intrinsics
    cy = intr.cy
    rgb = _background(cfg, cy, rng)
    instance = np.zeros((h, w), dtype=np.int32)
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1)) if cfg.max_objects > 0 else 0
    placed: list[tuple[int, int, int, int]] = []
    classes, obj_depth = [], []
    for _ in range(n_obj):
        cls = int(rng.integers(0, 3))
        wmin, wmax, hmin, hmax = SIZE_RANGES[cls]
        ow, oh = int(rng.integers(wmin, wmax + 1)), int(rng.integers(hmin, hmax + 1))
        for _attempt in range(60):
            x1 = int(rng.integers(0, w - ow + 1))
            y2 = int(rng.integers(int(cy) + 6, h + 1))
            y1 = y2 - oh
            if y1 < 0:
                continue
            if all(x1 + ow + 2 <= a or b + 2 <= x1 or y2 + 2 <= c or d + 2 <= y1 for a, c, b, d in placed):
                break
        else:
            continue
        placed.append((x1, y1, x1 + ow, y2))
        classes.append(cls)
        mask = _shape_mask(cls, ow, oh)
        hue = rng.uniform(0, 1)
        color = _hsv_to_rgb(hue, rng.uniform(0.5, 0.9), rng.uniform(0.45, 0.85))
        tex = _texture(cls, ow, oh, color, rng)
        region = rgb[:, y1:y2, x1:x1 + ow]
        region[:, mask] = tex[:, mask]
        instance[y1:y2, x1:x1 + ow][mask] = len(placed)
        z_back = float(ground_depth(y2 - 0.5, cfg))
        obj_depth.append(min(z_back * rng.uniform(0.7, 0.95), 0.9 * cfg.d_max))

    rgb = quantize(np.clip(rgb, 0.0, 1.0))

    # lidar rays through sub-pixel centres on a sparse scan grid
    r0 = int(rng.integers(0, cfg.lidar_row_step))
    c0 = int(rng.integers(0, cfg.lidar_col_step))
    rows = np.arange(r0, h, cfg.lidar_row_step)
    cols = np.arange(c0, w, cfg.lidar_col_step)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    u, v = cc + 0.5, rr + 0.5
    inst = instance[rr, cc]
    z = ground_depth(v, cfg)
    if obj_depth:
        z = np.where(inst > 0, np.asarray(obj_depth)[np.maximum(inst - 1, 0)], z)
    hit = np.isfinite(z) & (z <= cfg.d_max)
    points = backproject(u[hit], v[hit], z[hit], intr)
    depth, valid = project_pointcloud(points, intr, (h, w))

    boxes = np.zeros((len(placed), 4), dtype=np.float32)
    for i in range(len(placed)):
        ys, xs = np.nonzero(instance == i + 1)
        boxes[i] = (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
    sample = Sample(rgb=rgb, depth=depth, valid_mask=valid, boxes=boxes,
                    classes=np.asarray(classes, dtype=np.int64), domain="clear_day")
    return sample, instance


def generate_scene(rng: np.random.Generator, cfg: SceneConfig = SceneConfig()) -> Sample:
    """A labelled clear-day frame with entropy maps attached."""
    sample, _ = render_scene(rng, cfg)
    return sample.with_entropy(cfg.d_max)
