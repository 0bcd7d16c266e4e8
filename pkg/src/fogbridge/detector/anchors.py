"""Anchor priors from box-size statistics (k-means with a 1 - IoU distance)."""
from __future__ import annotations

import numpy as np


def wh_iou(wh: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """IoU of centre-aligned boxes: [N,2] sizes against [K,2] priors."""
    inter = np.minimum(wh[:, None, 0], anchors[None, :, 0]) * np.minimum(wh[:, None, 1], anchors[None, :, 1])
    union = (wh[:, 0] * wh[:, 1])[:, None] + (anchors[:, 0] * anchors[:, 1])[None, :] - inter
    return inter / union


def kmeans_anchors(wh: np.ndarray, k: int = 3, iters: int = 100) -> np.ndarray:
    """Deterministic k-means over (w, h); centroids returned sorted by area.

    Centroids start at area quantiles so the result does not depend on a seed.
    """
    wh = np.asarray(wh, dtype=np.float64).reshape(-1, 2)
    if len(wh) < k:
        raise ValueError(f"need at least {k} boxes for {k} anchors, got {len(wh)}")
    order = np.argsort(wh[:, 0] * wh[:, 1], kind="stable")
    centroids = wh[order[((np.arange(k) + 0.5) * len(wh) / k).astype(int)]].copy()
    for _ in range(iters):
        assign = wh_iou(wh, centroids).argmax(axis=1)
        new = np.array([wh[assign == j].mean(axis=0) if np.any(assign == j) else centroids[j] for j in range(k)])
        if np.allclose(new, centroids):
            break
        centroids = new
    return centroids[np.argsort(centroids[:, 0] * centroids[:, 1], kind="stable")]


def anchors_from_boxes(boxes_list) -> tuple:
    wh = np.concatenate([np.asarray(b, dtype=np.float64).reshape(-1, 4) for b in boxes_list])
    wh = np.stack([wh[:, 2] - wh[:, 0], wh[:, 3] - wh[:, 1]], axis=1)
    return tuple(tuple(round(float(v), 3) for v in a) for a in kmeans_anchors(wh))
