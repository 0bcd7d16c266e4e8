"""Two-stage training: adversarial warm-up, then self-supervised adaptation.

Stage 1 (warm-up): detection loss on source plus, when discriminators are
enabled, the adversarial feature loss and discriminator feature matching on
target features; a separate step fits the discriminators.
Stage 2: detection loss on source plus a pretext loss on a mixed
source/target batch; discriminators are left untouched.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_geometric_only, augment_source
from .autodiff import backward, nn, ops
from .autodiff.optim import SGD, Adam
from .detector import FusionDetector, FusionDetectorConfig, anchors_from_boxes, save_checkpoint
from .entropy import downscale_entropy
from .objectives import (
    adv_discriminator_loss,
    adv_feature_loss,
    detection_loss,
    feature_matching_loss,
    make_discriminators,
    pretext_loss,
)
from .pretext import PretextConfig, TaskSampler, apply_task, make_ssl_heads
from .sample import Sample
from .synthdata import BalancedSampler, SplitData

MODES = ("source_only", "stda", "mtda", "oracle")
LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "stda"
    targets: tuple = ("dense_fog",)
    batch_size: int = 10
    det_lr: float = 0.013
    det_momentum: float = 0.9
    lr_schedule: str = "cosine"          # detector rate: constant, or cosine decay to 1% over all steps
    weight_decay: float = 5e-4
    aux_lr: float = 1e-4                 # Adam, discriminators and SSL heads
    warmup_steps: int = 1500
    ssl_steps: int = 1500
    lambda_adv: float = 0.1
    lambda_fm: float = 1.0
    lambda_ssl: float = 1.0
    use_augment: bool = True
    use_discriminator: bool = True
    use_feature_matching: bool = True
    use_ssl: bool = True
    balanced: bool = True
    grad_clip: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "stda" and len(self.targets) != 1:
            raise ValueError(f"targets: stda needs exactly one target domain, got {list(self.targets)}")
        if self.mode == "mtda" and len(self.targets) < 2:
            raise ValueError(f"targets: mtda needs at least two target domains, got {list(self.targets)}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.warmup_steps < 0 or self.ssl_steps < 0:
            raise ValueError("step counts must be non-negative")

    @property
    def adaptive(self) -> bool:
        return self.mode in ("stda", "mtda")

    @property
    def discriminators_on(self) -> bool:
        return self.adaptive and self.use_discriminator

    @property
    def ssl_on(self) -> bool:
        return self.adaptive and self.use_ssl

    @property
    def total_steps(self) -> int:
        return self.warmup_steps + self.ssl_steps

    def det_lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant" or self.total_steps == 0:
            return self.det_lr
        frac = min(step, self.total_steps) / self.total_steps
        return self.det_lr * (0.01 + 0.99 * 0.5 * (1.0 + math.cos(math.pi * frac)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "targets" in d:
            d["targets"] = tuple(d["targets"])
        return cls(**d)


def weighting_map(dc: FusionDetectorConfig, batch: dict) -> np.ndarray:
    """Entropy map multiplied onto the features the discriminators see."""
    if dc.feature_source == "rgb" or (dc.feature_source == "fused" and dc.entropy_mode == "rgb"):
        return batch["e_rgb"]
    if dc.feature_source == "depth" or (dc.feature_source == "fused" and dc.entropy_mode == "depth"):
        return batch["e_depth"]
    return batch["e_max"]


def disc_inputs(detector: FusionDetector, out, batch: dict) -> list:
    """Entropy-weighted P3..P5 features, one per discriminator."""
    e = weighting_map(detector.cfg, batch)[:, None].astype(np.float32)
    return [ops.mul(f, downscale_entropy(e, s)) for f, s in zip(out.features, detector.strides)]


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, name: str):
        super().__init__(f"non-finite {name} loss at step {step}")
        self.step = step


def stack_batch(samples: list[Sample]) -> dict:
    return {
        "rgb": np.stack([s.rgb for s in samples]).astype(np.float32),
        "depth": np.stack([s.depth for s in samples]),
        "mask": np.stack([s.valid_mask for s in samples]),
        "e_rgb": np.stack([s.e_rgb for s in samples]),
        "e_depth": np.stack([s.e_depth for s in samples]),
        "e_max": np.stack([s.e_max for s in samples]),
        "boxes": [s.boxes for s in samples],
        "classes": [s.classes for s in samples],
    }


def param_digest(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def _clip(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return norm


def _fill_missing_grads(params) -> None:
    # a switched-off path (e.g. an unused branch conv) simply receives no update
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


class Trainer:
    """Owns the detector, auxiliary modules, optimizers and the data streams."""

    def __init__(self, cfg: TrainConfig, det_cfg: FusionDetectorConfig, source: SplitData,
                 targets: dict | None = None, augment: AugmentConfig = AugmentConfig(),
                 pretext: PretextConfig = PretextConfig(), d_max: float = 50.0):
        self.cfg = cfg
        targets = dict(targets or {})
        missing = [t for t in cfg.targets if t not in targets] if cfg.mode != "source_only" else []
        if missing:
            raise FileNotFoundError(f"no training data for target domain(s) {missing}")
        self.source = source
        self.targets = {t: targets[t] for t in cfg.targets if t in targets}
        if cfg.mode == "oracle":
            for t, split in self.targets.items():
                if not any(len(b) for b in split.boxes):
                    raise ValueError(f"oracle mode needs target labels, {t} has none")
        self.augment_cfg = augment
        self.pretext_cfg = pretext
        self.d_max = d_max
        self.detector = FusionDetector(replace(det_cfg, seed=cfg.seed, d_max=d_max))
        self.det_opt = SGD(self.detector.parameters(), cfg.det_lr, cfg.det_momentum, cfg.weight_decay)

        self.discriminators = []
        self.ssl_heads = {}
        if cfg.discriminators_on:
            self.discriminators = make_discriminators(det_cfg.head_widths, cfg.seed)
            self.disc_opt = Adam([p for d in self.discriminators for p in d.parameters()], cfg.aux_lr)
        if cfg.ssl_on:
            self.ssl_heads = make_ssl_heads(det_cfg.head_widths[0], pretext, cfg.seed)
            self.ssl_opts = {t: Adam(h.parameters(), cfg.aux_lr) for t, h in self.ssl_heads.items()}

        root = np.random.default_rng(cfg.seed)
        self.rng_data, self.rng_aug, self.rng_task = (np.random.default_rng(s) for s in root.spawn(3))
        self.task_sampler = TaskSampler(pretext.tasks, self.rng_task) if cfg.ssl_on else None
        self.target_sampler = None
        if self.targets and cfg.mode != "source_only":
            sizes = {t: len(s) for t, s in self.targets.items()}
            balanced = cfg.balanced or cfg.mode == "oracle"
            self.target_sampler = BalancedSampler(sizes, list(self.targets), self.rng_data, balanced)
        self.step = 0
        self.rows: list[dict] = []
        self.target_draws: list[str] = []

    # -- data --------------------------------------------------------------------------

    def _source_batch(self, n: int, augment: bool) -> dict:
        idx = self.rng_data.integers(0, len(self.source), size=n)
        samples = [self.source.sample(int(i)) for i in idx]
        if augment:
            samples = [augment_source(s, self.rng_aug, self.d_max, self.augment_cfg) for s in samples]
        return stack_batch(samples)

    def _target_samples(self, n: int, geometric: bool) -> list[Sample]:
        draws = self.target_sampler.draw_batch(n)
        self.target_draws.extend(d for d, _ in draws)
        samples = [self.targets[d].sample(i) for d, i in draws]
        if geometric:
            samples = [augment_geometric_only(s, self.rng_aug, self.d_max, self.augment_cfg) for s in samples]
        return samples

    def _oracle_batch(self, n: int) -> dict:
        if not self.targets:
            return self._source_batch(n, self.cfg.use_augment)
        n_src = n // 2
        idx = self.rng_data.integers(0, len(self.source), size=n_src)
        samples = [self.source.sample(int(i)) for i in idx]
        samples += self._target_samples(n - n_src, False)
        if self.cfg.use_augment:
            samples = [augment_source(s, self.rng_aug, self.d_max, self.augment_cfg) for s in samples]
        return stack_batch(samples)

    # -- pieces --------------------------------------------------------------------------

    def _forward(self, batch: dict):
        return self.detector.run(batch["rgb"], batch["depth"], batch["mask"],
                                 e_rgb=batch["e_rgb"], e_depth=batch["e_depth"], e_max=batch["e_max"])

    def _det_loss(self, out, batch):
        return detection_loss(out.grids, batch["boxes"], batch["classes"], self.detector.anchors,
                              self.detector.strides, return_parts=True)

    def disc_inputs(self, out, batch: dict) -> list:
        return disc_inputs(self.detector, out, batch)

    def _disc_pass(self, feats):
        outs, acts = [], []
        for d, f in zip(self.discriminators, feats):
            o, a = d(f)
            outs.append(o)
            acts.append(a)
        return outs, acts

    def _check(self, name: str, value: float) -> None:
        if not math.isfinite(value):
            self.rows.append({"step": self.step, "stage": "abort", name: value})
            raise TrainingDiverged(self.step, name)

    def _det_update(self, loss) -> float:
        self.det_opt.zero_grad()
        backward(loss)
        params = self.detector.parameters()
        _fill_missing_grads(params)
        norm = _clip(params, self.cfg.grad_clip)
        self.det_opt.step()
        return norm

    # -- steps ---------------------------------------------------------------------------

    def warmup_step(self) -> dict:
        cfg = self.cfg
        if cfg.mode == "oracle":
            batch = self._oracle_batch(cfg.batch_size)
        else:
            batch = self._source_batch(cfg.batch_size, cfg.use_augment)
        out_s = self._forward(batch)
        det, parts = self._det_loss(out_s, batch)
        row = {"step": self.step, "stage": 1, "det": float(det.data), **parts}
        total = det
        if cfg.discriminators_on:
            tgt = stack_batch(self._target_samples(cfg.batch_size, cfg.use_augment))
            out_t = self._forward(tgt)
            f_s = [ops.detach(f) for f in self.disc_inputs(out_s, batch)]
            f_t = self.disc_inputs(out_t, tgt)
            with _all_frozen(self.discriminators):
                d_t, acts_t = self._disc_pass(f_t)
                adv = adv_feature_loss(d_t)
                total = ops.add(total, ops.mul(adv, cfg.lambda_adv))
                row["adv_f"] = float(adv.data)
                if cfg.use_feature_matching:
                    _, acts_s = self._disc_pass(f_s)
                    fm = feature_matching_loss(acts_s, acts_t)
                    total = ops.add(total, ops.mul(fm, cfg.lambda_fm))
                    row["fm"] = float(fm.data)
        row["total"] = float(total.data)
        self._check("total", row["total"])
        row["grad_norm"] = self._det_update(total)

        if cfg.discriminators_on:
            d_s, _ = self._disc_pass(f_s)
            d_t, _ = self._disc_pass([ops.detach(f) for f in f_t])
            adv_d = adv_discriminator_loss(d_s, d_t)
            self._check("adv_d", float(adv_d.data))
            self.disc_opt.zero_grad()
            backward(adv_d)
            self.disc_opt.step()
            row["adv_d"] = float(adv_d.data)
        return row

    def ssl_step(self) -> dict:
        cfg = self.cfg
        batch = self._source_batch(cfg.batch_size, cfg.use_augment)
        out_s = self._forward(batch)
        det, parts = self._det_loss(out_s, batch)
        row = {"step": self.step, "stage": 2, "det": float(det.data), **parts}
        task = self.task_sampler.draw()
        n_src = cfg.batch_size // 2
        src = [self.source.sample(int(i)) for i in self.rng_data.integers(0, len(self.source), size=n_src)]
        if cfg.use_augment:
            src = [augment_source(s, self.rng_aug, self.d_max, self.augment_cfg) for s in src]
        mixed = src + self._target_samples(cfg.batch_size - n_src, cfg.use_augment)
        transformed = [apply_task(task, s, self.rng_task, self.pretext_cfg) for s in mixed]
        pbatch = stack_batch([t.sample for t in transformed])
        labels = np.stack([t.labels for t in transformed])
        out_p = self._forward(pbatch)
        logits = self.ssl_heads[task](out_p.fused[0])
        pl = pretext_loss(logits, labels)
        total = ops.add(det, ops.mul(pl, cfg.lambda_ssl))
        row.update(pretext=float(pl.data), task=task, total=float(total.data))
        self._check("total", row["total"])
        head = self.ssl_heads[task]
        for p in head.parameters():
            p.grad = None
        row["grad_norm"] = self._det_update(total)
        _fill_missing_grads(head.parameters())
        self.ssl_opts[task].step()
        return row

    def plain_step(self) -> dict:
        """Detection-only step (source_only, oracle, or stage 2 without SSL)."""
        cfg = self.cfg
        batch = self._oracle_batch(cfg.batch_size) if cfg.mode == "oracle" else \
            self._source_batch(cfg.batch_size, cfg.use_augment)
        out = self._forward(batch)
        det, parts = self._det_loss(out, batch)
        row = {"step": self.step, "stage": 1 if self.step < cfg.warmup_steps else 2,
               "det": float(det.data), **parts, "total": float(det.data)}
        self._check("total", row["total"])
        row["grad_norm"] = self._det_update(det)
        return row

    def train_step(self) -> dict:
        self.det_opt.lr = self.cfg.det_lr_at(self.step)
        in_warmup = self.step < self.cfg.warmup_steps
        if in_warmup and self.cfg.discriminators_on:
            row = self.warmup_step()
        elif not in_warmup and self.cfg.ssl_on:
            row = self.ssl_step()
        else:
            row = self.plain_step()
        row["lr_det"] = self.det_opt.lr
        if self.discriminators or self.ssl_heads:
            row["lr_aux"] = self.cfg.aux_lr
        self.rows.append(row)
        self.step += 1
        return row

    def run(self, steps: int | None = None, on_stage_end=None, log_every: int = 0, log=print) -> None:
        end = self.cfg.total_steps if steps is None else min(self.cfg.total_steps, self.step + steps)
        while self.step < end:
            row = self.train_step()
            if log_every and self.step % log_every == 0:
                log(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
            if on_stage_end and self.step == self.cfg.warmup_steps and self.cfg.ssl_steps:
                on_stage_end(self, "stage1")

    # -- persistence ---------------------------------------------------------------------

    def modules(self) -> dict:
        mods = {"detector": self.detector}
        for i, d in enumerate(self.discriminators):
            mods[f"disc{i}"] = d
        for t, h in self.ssl_heads.items():
            mods[f"ssl_{t}"] = h
        return mods

    def save(self, path, meta: dict | None = None) -> Path:
        manifest = {"step": self.step, "detector": self.detector.cfg.to_dict(), "train": self.cfg.to_dict()}
        manifest.update(meta or {})
        return save_checkpoint(path, self.modules(), manifest)

    def write_metrics(self, path, comment: str | None = None) -> Path:
        """Per-step CSV; ``comment`` becomes a leading ``#`` line."""
        path = Path(path)
        columns = ["step", "stage", "total", "det", "box", "obj", "cls"]
        if self.cfg.discriminators_on:
            columns += ["adv_f", "fm", "adv_d"] if self.cfg.use_feature_matching else ["adv_f", "adv_d"]
        if self.cfg.ssl_on:
            columns += ["pretext", "task"]
        columns += ["grad_norm", "lr_det"] + (["lr_aux"] if (self.discriminators or self.ssl_heads) else [])
        with path.open("w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return path


class _all_frozen:
    """Freeze several modules at once."""

    def __init__(self, modules):
        self.ctx = [nn.frozen(m) for m in modules]

    def __enter__(self):
        for c in self.ctx:
            c.__enter__()

    def __exit__(self, *exc):
        for c in reversed(self.ctx):
            c.__exit__(*exc)
        return False


def fit_anchors(source: SplitData) -> tuple:
    return anchors_from_boxes(source.boxes)


def train(cfg: TrainConfig, index, out_dir, det_cfg: FusionDetectorConfig = FusionDetectorConfig(),
          augment: AugmentConfig = AugmentConfig(), pretext: PretextConfig = PretextConfig(),
          meta: dict | None = None, log_every: int = 0) -> Trainer:
    """Train from a dataset index; writes checkpoints and metrics.csv under ``out_dir``."""
    from .synthdata import load_split

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index.require("clear_day", "train")
    source = load_split(index, "clear_day", "train")
    targets = {}
    if cfg.mode != "source_only":
        for t in cfg.targets:
            index.require(t, "train")
            targets[t] = load_split(index, t, "train")
    det_cfg = replace(det_cfg, anchors=fit_anchors(source))
    trainer = Trainer(cfg, det_cfg, source, targets, augment, pretext, d_max=index.config.scene.d_max)
    meta = dict(meta or {})
    meta.setdefault("dataset_hash", index.config_hash)

    def stage_end(tr, name):
        tr.save(out_dir / f"checkpoint_{name}", meta)

    try:
        trainer.run(on_stage_end=stage_end, log_every=log_every)
    finally:
        ch = meta.get("config_hash")
        trainer.write_metrics(out_dir / "metrics.csv", f"config_hash={ch}" if ch else None)
    trainer.save(out_dir / "checkpoint", meta)
    (out_dir / "train_summary.json").write_text(json.dumps(
        {"steps": trainer.step, "config_hash": meta.get("config_hash", ""),
         "final_params": param_digest(trainer.detector)}, indent=1, sort_keys=True) + "\n")
    return trainer
