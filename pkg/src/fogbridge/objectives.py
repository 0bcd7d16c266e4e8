"""Training objectives: detection loss, least-squares adversarial losses,
discriminator feature matching and the grid-shaped pretext loss."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor, nn, ops
from .detector.anchors import wh_iou

BOX_WEIGHT, OBJ_WEIGHT, CLS_WEIGHT = 5.0, 1.0, 1.0
PRETEXT_CLASSES = 4


class Discriminator(nn.Module):
    """L stride-2 3x3 conv layers with leaky ReLU and a real-valued 1x1 output map."""

    def __init__(self, in_ch: int, rng: np.random.Generator, width: int = 64, layers: int = 3):
        chans = [in_ch] + [width] * layers
        self.convs = [nn.Conv2d(chans[i], chans[i + 1], 3, rng, stride=2, padding=1) for i in range(layers)]
        self.out = nn.Conv2d(width, 1, 1, rng, padding=0)

    def forward(self, x) -> tuple[Tensor, list[Tensor]]:
        acts = []
        for conv in self.convs:
            x = ops.leaky_relu(conv(x), 0.2)
            acts.append(x)
        return self.out(x), acts


def make_discriminators(channels, seed: int = 0) -> list[Discriminator]:
    rng = np.random.default_rng([seed, 7])
    return [Discriminator(c, rng) for c in channels]


# -- detection -------------------------------------------------------------------

def assign_targets(boxes: np.ndarray, classes: np.ndarray, anchors: np.ndarray, strides, grid_shapes):
    """Responsible (scale, row, col) per ground-truth box and its regression targets.

    The scale is the one whose anchor has the best centred IoU with the box.
    A later box that lands on an occupied cell replaces the earlier one.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    wh = np.stack([boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1]], axis=1)
    if np.any(wh <= 0):
        raise ValueError(f"degenerate ground-truth box in {boxes.tolist()}")
    targets = {}
    if not len(boxes):
        return targets
    best = wh_iou(wh, np.asarray(anchors, dtype=np.float64)).argmax(axis=1)
    cx = (boxes[:, 0] + boxes[:, 2]) / 2
    cy = (boxes[:, 1] + boxes[:, 3]) / 2
    for i, k in enumerate(best):
        s = strides[k]
        gh, gw = grid_shapes[k]
        col = min(int(cx[i] // s), gw - 1)
        row = min(int(cy[i] // s), gh - 1)
        t = (cx[i] / s - col, cy[i] / s - row,
             np.log(wh[i, 0] / anchors[k][0]), np.log(wh[i, 1] / anchors[k][1]))
        targets[(int(k), row, col)] = (t, int(classes[i]))
    return targets


def detection_loss(grids, boxes_list, classes_list, anchors, strides, return_parts: bool = False):
    """Box MSE on (sigmoid(tx), sigmoid(ty), tw, th), objectness BCE over every
    cell, class cross-entropy on responsible cells.

    Box and class terms are averaged over ground-truth boxes; objectness is
    summed over cells and averaged over the batch.
    """
    grids = [as_tensor(g) for g in grids]
    n = grids[0].shape[0]
    shapes = [g.shape[2:] for g in grids]
    per_scale = [[] for _ in grids]        # (b, row, col, t, cls)
    for b in range(n):
        for (k, row, col), (t, c) in assign_targets(boxes_list[b], classes_list[b], anchors, strides, shapes).items():
            per_scale[k].append((b, row, col, t, c))

    obj_total = box_total = cls_total = None
    n_pos = sum(len(p) for p in per_scale)
    for k, g in enumerate(grids):
        obj_target = np.zeros((n,) + tuple(shapes[k]), dtype=g.dtype)
        pos = per_scale[k]
        if pos:
            bi, ri, ci = (np.array([p[j] for p in pos]) for j in range(3))
            obj_target[bi, ri, ci] = 1.0
        obj = ops.sum(ops.bce_with_logits(g[:, 4], obj_target))
        obj_total = obj if obj_total is None else ops.add(obj_total, obj)
        if not pos:
            continue
        cells = ops.getitem(ops.transpose(g, (0, 2, 3, 1)), (bi, ri, ci))     # P x (5+C)
        t = np.array([p[3] for p in pos], dtype=g.dtype)
        pred = ops.concat([ops.sigmoid(cells[:, 0:2]), cells[:, 2:4]], axis=1)
        box = ops.sum(ops.square(ops.sub(pred, t)))
        labels = np.array([p[4] for p in pos], dtype=np.int64)
        cls = ops.mul(ops.softmax_cross_entropy(cells[:, 5:], labels), float(len(pos)))
        box_total = box if box_total is None else ops.add(box_total, box)
        cls_total = cls if cls_total is None else ops.add(cls_total, cls)

    obj_term = ops.mul(obj_total, OBJ_WEIGHT / n)
    total = obj_term
    parts = {"obj": float(obj_term.data)}
    if n_pos:
        box_term = ops.mul(box_total, BOX_WEIGHT / n_pos)
        cls_term = ops.mul(cls_total, CLS_WEIGHT / n_pos)
        total = ops.add(ops.add(total, box_term), cls_term)
        parts.update(box=float(box_term.data), cls=float(cls_term.data))
    else:
        parts.update(box=0.0, cls=0.0)
    return (total, parts) if return_parts else total


# -- adversarial -------------------------------------------------------------------

def _check_scales(*groups):
    counts = {len(g) for g in groups}
    if len(counts) != 1:
        raise ValueError(f"scale count mismatch: {[len(g) for g in groups]}")


def adv_discriminator_loss(d_source, d_target) -> Tensor:
    """sum_k mean(D_k(f_t)^2) + mean((1 - D_k(f_s))^2)."""
    _check_scales(d_source, d_target)
    total = None
    for s, t in zip(d_source, d_target):
        term = ops.add(ops.mean(ops.square(t)), ops.mean(ops.square(ops.sub(1.0, s))))
        total = term if total is None else ops.add(total, term)
    return total


def adv_feature_loss(d_target) -> Tensor:
    """sum_k mean((1 - D_k(f_t))^2); run it with the discriminators frozen."""
    total = None
    for t in d_target:
        term = ops.mean(ops.square(ops.sub(1.0, t)))
        total = term if total is None else ops.add(total, term)
    return total


def feature_matching_loss(source_acts, target_acts) -> Tensor:
    """sum_k sum_l mean((E_batch[D_k^l(f_s)] - E_batch[D_k^l(f_t)])^2).

    Source activations are treated as constants so only the target path
    receives gradient.
    """
    _check_scales(source_acts, target_acts)
    total = None
    for s_layers, t_layers in zip(source_acts, target_acts):
        if len(s_layers) != len(t_layers):
            raise ValueError(f"layer count mismatch: {len(s_layers)} vs {len(t_layers)}")
        for s, t in zip(s_layers, t_layers):
            s, t = as_tensor(s), as_tensor(t)
            if s.shape[1:] != t.shape[1:]:
                raise ValueError(f"activation shapes differ: {s.shape} vs {t.shape}")
            s_mean = ops.detach(ops.mean(s, axis=0))
            t_mean = ops.mean(t, axis=0)
            term = ops.mean(ops.square(ops.sub(s_mean, t_mean)))
            total = term if total is None else ops.add(total, term)
    return total


# -- pretext --------------------------------------------------------------------------

def pretext_loss(logits, labels) -> Tensor:
    """Mean per-cell softmax cross-entropy of [N,4,Gh,Gw] logits (or [4,Gh,Gw])."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim == 3:
        logits = ops.reshape(logits, (1,) + logits.shape)
        labels = labels[None]
    if logits.shape[1] != PRETEXT_CLASSES:
        raise ValueError(f"pretext logits need {PRETEXT_CLASSES} classes, got {logits.shape[1]}")
    if logits.shape[2:] != labels.shape[1:] or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"logit grid {logits.shape} does not match label grid {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= PRETEXT_CLASSES):
        raise ValueError(f"pretext labels must lie in 0..{PRETEXT_CLASSES - 1}")
    return ops.softmax_cross_entropy(logits, labels.astype(np.int64), axis=1)
