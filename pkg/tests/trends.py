"""Training-based acceptance checks: domain gap, cumulative ablation, discriminator confusion.

Every run goes through the same experiment pipeline as the CLI (gen-data,
train, eval) on the default synthetic dataset, with step counts reduced by
``TREND_STEPS``. Runs are cached under the given root keyed by config hash, so
criteria 7 and 9 share their training runs. Set FOGBRIDGE_TREND_DIR to keep
the cache across sessions.
"""
import json
import os
import statistics
from dataclasses import replace
from pathlib import Path

import numpy as np

from fogbridge.autodiff import no_grad
from fogbridge.detector import FusionDetector, FusionDetectorConfig, load_state, read_manifest
from fogbridge.eval import EvalReport
from fogbridge.experiment import ExperimentConfig, eval_run, gen_data, preset_configs, train_run
from fogbridge.synthdata import DatasetIndex, load_split
from fogbridge.trainer import disc_inputs, stack_batch

SEEDS = (0, 1, 2)
TREND_STEPS = {"warmup_steps": 1000, "ssl_steps": 1000}
DENSE = "dense_fog"


def root_dir(default) -> Path:
    return Path(os.environ.get("FOGBRIDGE_TREND_DIR") or default)


def base_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig().with_overrides(seed=seed, train=TREND_STEPS)


def dataset(root: Path, seed: int) -> Path:
    data = root / f"data_seed{seed}"
    if not (data / "index.json").exists():
        gen_data(base_config(seed), data)
    return data


def run(root: Path, cfg: ExperimentConfig) -> EvalReport:
    """Train and evaluate ``cfg`` unless a finished run with the same hash exists."""
    data = dataset(root, cfg.seed)
    run_dir = root / "runs" / cfg.config_hash
    report = run_dir / "report.json"
    if not report.exists():
        train_run(cfg, data, run_dir)
        eval_run(cfg, data, run_dir)
    return EvalReport.from_json(json.loads(report.read_text()))


def gap_configs(seed: int) -> dict:
    base = base_config(seed)
    return {
        "source_only": base.with_overrides(train={"mode": "source_only", "targets": [], "use_augment": False}),
        "full": base.with_overrides(train={"mode": "stda", "targets": [DENSE]}),
        "oracle": base.with_overrides(train={"mode": "oracle", "targets": [DENSE]}),
    }


def _median(xs):
    return float(statistics.median(xs))


def domain_gap(root) -> tuple[bool, str]:
    root = root_dir(root)
    per = {name: [] for name in ("source_only", "full", "oracle")}
    for seed in SEEDS:
        for name, cfg in gap_configs(seed).items():
            per[name].append(run(root, cfg))
    so = per["source_only"]
    clear = _median([r.domain_mean("clear_day") for r in so])
    targets = so[0].target_domains
    gaps = {d: clear - _median([r.domain_mean(d) for r in so]) for d in targets}
    dense = {k: _median([r.domain_mean(DENSE) for r in v]) for k, v in per.items()}
    span = dense["oracle"] - dense["source_only"]
    recovered = (dense["full"] - dense["source_only"]) / span if span > 0 else float("nan")
    ok_a = all(g >= 10 for g in gaps.values())
    ok_b = recovered >= 0.3
    ok_c = dense["oracle"] >= dense["full"] >= dense["source_only"]
    detail = (f"(a) {'ok' if ok_a else 'FAIL'} gaps " + " ".join(f"{d}={g:.1f}" for d, g in gaps.items())
              + f"; (b) {'ok' if ok_b else 'FAIL'} recovered {100 * recovered:.0f}% of the dense_fog gap"
              + f"; (c) {'ok' if ok_c else 'FAIL'} dense_fog so/full/oracle "
              + "/".join(f"{dense[k]:.1f}" for k in ("source_only", "full", "oracle")))
    return ok_a and ok_b and ok_c, detail


def cumulative_ablation(root) -> tuple[bool, str]:
    root = root_dir(root)
    table = {}
    for seed in SEEDS:
        for row, cfg in preset_configs("table2", base_config(seed)):
            table.setdefault(row.name, []).append(run(root, cfg).overall_mean)
    med = {k: _median(v) for k, v in table.items()}
    names = list(med)
    steps_ok = all(med[b] >= med[a] - 1.0 for a, b in zip(names, names[1:]))
    gain = med[names[-1]] - med[names[0]]
    ok = steps_ok and gain >= 3.0
    detail = " ".join(f"{k}={v:.1f}" for k, v in med.items()) + f"; F-A={gain:+.1f}"
    if not steps_ok:
        drops = [f"{a}->{b} {med[b] - med[a]:+.1f}" for a, b in zip(names, names[1:]) if med[b] < med[a] - 1.0]
        detail += "; drops " + ", ".join(drops)
    return ok, detail


# -- probe ----------------------------------------------------------------------------

def _load(checkpoint: Path) -> FusionDetector:
    manifest = read_manifest(checkpoint)
    det = FusionDetector(FusionDetectorConfig.from_dict(manifest["detector"]))
    det.load_state_dict(load_state(checkpoint, "detector"))
    return det.eval()


def pooled_features(det: FusionDetector, split, batch: int = 25) -> np.ndarray:
    """Per-frame mean of the entropy-weighted P3..P5 features the discriminators see."""
    rows = []
    with no_grad():
        for lo in range(0, len(split), batch):
            b = stack_batch([split.sample(i) for i in range(lo, min(lo + batch, len(split)))])
            out = det.run(b["rgb"], b["depth"], b["mask"], e_rgb=b["e_rgb"], e_depth=b["e_depth"], e_max=b["e_max"])
            rows.append(np.concatenate([f.data.mean(axis=(2, 3)) for f in disc_inputs(det, out, b)], axis=1))
    return np.concatenate(rows).astype(np.float64)


def logistic_probe(x_train, y_train, x_test, y_test, l2: float = 1e-2, iters: int = 2000) -> float:
    """Fresh L2-regularized logistic regression; returns held-out accuracy."""
    mu, sd = x_train.mean(0), x_train.std(0) + 1e-8
    a, b = (x_train - mu) / sd, (x_test - mu) / sd
    w, c = np.zeros(a.shape[1]), 0.0
    lr = 0.5
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(a @ w + c)))
        g = p - y_train
        w -= lr * (a.T @ g / len(a) + l2 * w)
        c -= lr * g.mean()
    return float(np.mean(((b @ w + c) > 0) == (y_test > 0.5)))


def probe_accuracy(checkpoint: Path, index: DatasetIndex, per_domain: int = 80) -> float:
    det = _load(checkpoint)
    xs, ys = {}, {}
    for split in ("train", "test"):
        feats, labels = [], []
        for label, domain in enumerate(("clear_day", DENSE)):
            s = load_split(index, domain, split)
            n = min(per_domain, len(s))
            s = replace(s, rgb=s.rgb[:n], depth=s.depth[:n], mask=s.mask[:n], e_rgb=s.e_rgb[:n],
                        e_depth=s.e_depth[:n], e_max=s.e_max[:n], boxes=s.boxes[:n], classes=s.classes[:n])
            feats.append(pooled_features(det, s))
            labels.append(np.full(n, label, float))
        xs[split], ys[split] = np.concatenate(feats), np.concatenate(labels)
    return logistic_probe(xs["train"], ys["train"], xs["test"], ys["test"])


def probe_confusion(root) -> tuple[bool, str]:
    root = root_dir(root)
    before, after = [], []
    for seed in SEEDS:
        cfgs = gap_configs(seed)
        for name in ("source_only", "full"):
            run(root, cfgs[name])
        index = DatasetIndex.load(dataset(root, seed))
        before.append(probe_accuracy(root / "runs" / cfgs["source_only"].config_hash / "checkpoint", index))
        after.append(probe_accuracy(root / "runs" / cfgs["full"].config_hash / "checkpoint_stage1", index))
    b, a = _median(before), _median(after)
    ok = b > 0.9 and 0.4 <= a <= 0.65
    return ok, (f"probe accuracy before {b:.3f} (seeds {', '.join(f'{v:.2f}' for v in before)}), "
                f"after warm-up {a:.3f} (seeds {', '.join(f'{v:.2f}' for v in after)})")
