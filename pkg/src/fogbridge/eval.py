"""KITTI-style evaluation: greedy IoU matching and 40-point interpolated AP."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .detector import decode
from .sample import CLASS_NAMES, NUM_CLASSES

# Car at IoU 0.7, pedestrian and ridable vehicle at 0.5
IOU_THRESHOLDS = (0.7, 0.5, 0.5)
RECALL_POINTS = np.linspace(1.0 / 40, 1.0, 40)


def iou(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for box in (a, b):
        if not (box[2] > box[0] and box[3] > box[1]):
            raise ValueError(f"degenerate box {box.tolist()}")
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def match_detections(detections, ground_truth, iou_threshold: float):
    """Greedy matching, most confident detection first.

    ``detections``: iterable of (image, score, box); ``ground_truth``: iterable
    of (image, box). Returns (scores sorted descending, true-positive flags,
    number of ground-truth boxes).
    """
    gt_by_image: dict = {}
    for img, box in ground_truth:
        gt_by_image.setdefault(img, []).append(np.asarray(box, dtype=np.float64))
    used = {img: np.zeros(len(b), dtype=bool) for img, b in gt_by_image.items()}
    dets = sorted(detections, key=lambda d: -d[1])
    scores = np.array([d[1] for d in dets], dtype=np.float64)
    tp = np.zeros(len(dets), dtype=bool)
    for i, (img, _, box) in enumerate(dets):
        gts = gt_by_image.get(img)
        if not gts:
            continue
        best, best_iou = -1, iou_threshold
        for j, g in enumerate(gts):
            if used[img][j]:
                continue
            o = iou(box, g)
            if o >= best_iou:
                best, best_iou = j, o
        if best >= 0:
            used[img][best] = True
            tp[i] = True
    n_gt = sum(len(b) for b in gt_by_image.values())
    return scores, tp, n_gt


def interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """Area under the interpolated PR curve sampled at recall 1/40 .. 40/40."""
    if n_gt == 0:
        return math.nan
    if not len(tp):
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    # running max from the right: best precision at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    for r in RECALL_POINTS:
        idx = np.searchsorted(recall, r - 1e-12, side="left")
        if idx < len(recall):
            ap += envelope[idx]
    return float(ap / len(RECALL_POINTS))


def average_precision(detections, ground_truth, iou_threshold: float) -> float:
    """AP in [0, 1]; NaN when there is no ground truth."""
    _, tp, n_gt = match_detections(detections, ground_truth, iou_threshold)
    return interpolated_ap(tp, n_gt)


# -- reports ---------------------------------------------------------------------------

def _nanmean(values) -> float:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


@dataclass
class EvalReport:
    ap: dict                                   # domain -> class name -> AP in [0, 100] (None if skipped)
    target_domains: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def domain_mean(self, domain: str) -> float:
        return _nanmean([v for v in self.ap[domain].values() if v is not None])

    @property
    def overall_mean(self) -> float:
        """Mean over every (target domain, class) value."""
        vals = [v for d in self.target_domains for v in self.ap[d].values() if v is not None]
        return _nanmean(vals)

    def to_json(self) -> dict:
        def r(x):
            return None if x is None or math.isnan(x) else round(float(x), 6)

        return {
            "schema": 1,
            "meta": self.meta,
            "ap": {d: {c: r(v) for c, v in per.items()} for d, per in self.ap.items()},
            "domain_mean": {d: r(self.domain_mean(d)) for d in self.ap},
            "target_domains": list(self.target_domains),
            "overall_target_mean": r(self.overall_mean),
        }

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jp, tp = out_dir / "report.json", out_dir / "report.txt"
        jp.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")
        tp.write_text(self.table() + "\n")
        return jp, tp

    def table(self) -> str:
        cols = [f"{d}:{c[:3]}" for d in self.ap for c in self.ap[d]] + ["mean"]
        cells = []
        for d in self.ap:
            for v in self.ap[d].values():
                cells.append("-" if v is None or math.isnan(v) else f"{v:.1f}")
        mean = self.overall_mean
        cells.append("-" if math.isnan(mean) else f"{mean:.1f}")
        width = [max(len(a), len(b)) for a, b in zip(cols, cells)]
        head = "  ".join(c.rjust(w) for c, w in zip(cols, width))
        row = "  ".join(c.rjust(w) for c, w in zip(cells, width))
        return head + "\n" + row

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(ap=d["ap"], target_domains=d["target_domains"], meta=d.get("meta", {}))


def predict_split(detector, split, batch_size: int = 25, conf_threshold: float = 0.05, nms_iou: float = 0.5):
    """Detections for every frame of a SplitData, in eval mode and without a tape."""
    was_training = detector.training
    detector.eval()
    out = []
    try:
        with no_grad():
            for start in range(0, len(split), batch_size):
                sl = slice(start, start + batch_size)
                res = detector.run(split.rgb[sl], split.depth[sl], split.mask[sl],
                                   e_rgb=split.e_rgb[sl], e_depth=split.e_depth[sl], e_max=split.e_max[sl])
                out.extend(decode([g.data for g in res.grids], detector.anchors, detector.strides,
                                  conf_threshold, nms_iou, frame=split.rgb.shape[2:]))
    finally:
        detector.train(was_training)
    return out


def class_aps(predictions, split) -> dict:
    """class name -> AP in [0, 100], None when the class has no ground truth."""
    result = {}
    for c in range(NUM_CLASSES):
        dets = [(i, d.confidence, d.box) for i, frame in enumerate(predictions) for d in frame if d.class_id == c]
        gts = [(i, b) for i in range(len(split)) for b, k in zip(split.boxes[i], split.classes[i]) if k == c]
        ap = average_precision(dets, gts, IOU_THRESHOLDS[c])
        result[CLASS_NAMES[c]] = None if math.isnan(ap) else 100.0 * ap
    return result


def evaluate_model(detector, splits: dict, target_domains=None, meta=None, **kw) -> EvalReport:
    """``splits``: domain -> SplitData."""
    ap = {d: class_aps(predict_split(detector, s, **kw), s) for d, s in splits.items()}
    targets = [d for d in splits if d != "clear_day"] if target_domains is None else list(target_domains)
    return EvalReport(ap=ap, target_domains=targets, meta=dict(meta or {}))


def evaluate(checkpoint, index, domains, split: str = "test", allow_hash_mismatch: bool = False,
             **kw) -> EvalReport:
    """Load a checkpoint and evaluate it on ``split`` of each domain; ``kw`` goes to ``predict_split``."""
    from .detector.checkpoint import load_state, read_manifest
    from .detector.model import FusionDetector, FusionDetectorConfig
    from .synthdata import load_split

    manifest = read_manifest(checkpoint)
    if (not allow_hash_mismatch and manifest.get("dataset_hash") and index.config_hash
            and manifest["dataset_hash"] != index.config_hash):
        raise ValueError(f"checkpoint was trained on dataset {manifest['dataset_hash']}, "
                         f"not {index.config_hash}")
    for d in domains:
        index.require(d, split)
    detector = FusionDetector(FusionDetectorConfig.from_dict(manifest["detector"]))
    detector.load_state_dict(load_state(checkpoint, "detector"))
    splits = {d: load_split(index, d, split) for d in domains}
    meta = {"checkpoint_hash": manifest.get("config_hash", ""), "dataset_hash": index.config_hash, "split": split}
    return evaluate_model(detector, splits, meta=meta, **kw)
