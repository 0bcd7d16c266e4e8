"""Pinhole projection of camera-frame lidar points to a sparse depth raster."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Intrinsics(NamedTuple):
    fx: float
    fy: float
    cx: float
    cy: float


def project_pointcloud(points: np.ndarray, intrinsics: Intrinsics, frame: tuple[int, int]):
    """Project (X, Y, Z) points; returns (depth raster, valid mask).

    Pixel indices are ``floor(u), floor(v)`` with ``u = fx X / Z + cx``. Points
    behind the camera or outside the frame are dropped; when several points
    land on one pixel the nearest Z wins.
    """
    fx, fy, cx, cy = intrinsics
    if fx <= 0 or fy <= 0:
        raise ValueError(f"focal lengths must be positive, got fx={fx}, fy={fy}")
    h, w = frame
    depth = np.zeros((h, w), dtype=np.float32)
    mask = np.zeros((h, w), dtype=bool)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pts = pts[pts[:, 2] > 0]
    if not len(pts):
        return depth, mask
    x, y, z = pts.T
    u = np.floor(fx * x / z + cx).astype(np.int64)
    v = np.floor(fy * y / z + cy).astype(np.int64)
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    u, v, z = u[inside], v[inside], z[inside]
    nearest = np.full((h, w), np.inf)
    np.minimum.at(nearest, (v, u), z)
    mask[v, u] = True
    depth[mask] = nearest[mask]
    return depth, mask


def backproject(u: np.ndarray, v: np.ndarray, z: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    fx, fy, cx, cy = intrinsics
    return np.stack([(u - cx) * z / fx, (v - cy) * z / fy, z], axis=-1)
