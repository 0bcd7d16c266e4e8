"""Raw prediction grids -> scored boxes, and the box-geometry helpers they need."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..autodiff.ops import _sigmoid


class Detection(NamedTuple):
    box: tuple           # x1, y1, x2, y2 in pixels
    class_id: int
    confidence: float


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of [N,4] and [M,4] boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy suppression; returns kept indices in descending score order."""
    order = np.argsort(-scores, kind="stable")
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    ious = box_iou_matrix(boxes, boxes)
    for rank, i in enumerate(order):
        if suppressed[rank]:
            continue
        keep.append(i)
        suppressed[rank + 1:] |= ious[i, order[rank + 1:]] > iou_threshold
    return np.asarray(keep, dtype=np.int64)


def decode_grid(grid: np.ndarray, anchor, stride: int):
    """One image's [5+C,H,W] grid -> (boxes [HW,4], objectness prob, class probs [HW,C])."""
    k, h, w = grid.shape
    g = grid.reshape(k, -1).astype(np.float64)
    cy, cx = np.divmod(np.arange(h * w), w)
    x = (cx + _sigmoid(g[0])) * stride
    y = (cy + _sigmoid(g[1])) * stride
    bw = anchor[0] * np.exp(np.clip(g[2], -10, 10))
    bh = anchor[1] * np.exp(np.clip(g[3], -10, 10))
    boxes = np.stack([x - bw / 2, y - bh / 2, x + bw / 2, y + bh / 2], axis=1)
    obj = _sigmoid(g[4])
    logits = g[5:] - g[5:].max(axis=0, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=0, keepdims=True)
    return boxes, obj, probs.T


def decode(grids, anchors, strides, conf_threshold: float = 0.05, nms_iou: float = 0.5,
           frame: tuple[int, int] | None = None, max_detections: int = 100) -> list[list[Detection]]:
    """Per image detections from per-scale [N,5+C,H,W] arrays.

    Confidence is objectness times the top class probability. Boxes are
    clipped to ``frame`` (H, W) when given; NMS runs per class.
    """
    for name, v in (("conf_threshold", conf_threshold), ("nms_iou", nms_iou)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    grids = [np.asarray(getattr(g, "data", g)) for g in grids]
    n = grids[0].shape[0]
    out = []
    for i in range(n):
        all_boxes, all_conf, all_cls = [], [], []
        for g, anchor, stride in zip(grids, anchors, strides):
            boxes, obj, probs = decode_grid(g[i], anchor, stride)
            cls = probs.argmax(axis=1)
            conf = obj * probs.max(axis=1)
            sel = conf >= conf_threshold
            all_boxes.append(boxes[sel])
            all_conf.append(conf[sel])
            all_cls.append(cls[sel])
        boxes = np.concatenate(all_boxes)
        conf = np.concatenate(all_conf)
        cls = np.concatenate(all_cls)
        if frame is not None:
            fh, fw = frame
            boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0, fw)
            boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0, fh)
            ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
            boxes, conf, cls = boxes[ok], conf[ok], cls[ok]
        dets = []
        for c in np.unique(cls):
            idx = np.nonzero(cls == c)[0]
            for j in idx[nms(boxes[idx], conf[idx], nms_iou)]:
                dets.append(Detection(tuple(float(v) for v in boxes[j]), int(c), float(conf[j])))
        dets.sort(key=lambda d: -d.confidence)
        out.append(dets[:max_detections])
    return out
