"""Experiment configuration, ablation presets and the gen-data / train / eval pipeline.

An experiment is one JSON document (schema 1) with the sections ``dataset``,
``augment``, ``detector``, ``train``, ``pretext`` and ``eval`` plus a
top-level ``seed``. Every section may be partial; missing fields take their
defaults, unknown fields are rejected.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_source
from .detector import FusionDetectorConfig
from .eval import EvalReport, evaluate
from .imageio import write_pgm, write_ppm
from .pretext import TASKS, PretextConfig, apply_task
from .synthdata import TARGET_DOMAINS, DatasetConfig, DatasetIndex, generate_dataset, make_sample
from .trainer import MODES, TrainConfig, train

SCHEMA = 1

# fields derived elsewhere and therefore not settable from a config file
_DERIVED = {
    "augment": {"rng_seed"},
    "detector": {"anchors", "seed", "d_max"},
    "train": {"seed"},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the first offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class EvalConfig:
    split: str = "test"
    domains: tuple | None = None      # None: every domain in the dataset
    conf_threshold: float = 0.05
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        for name in ("conf_threshold", "nms_iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    augment: AugmentConfig = AugmentConfig()
    detector: FusionDetectorConfig = FusionDetectorConfig()
    train: TrainConfig = TrainConfig()
    pretext: PretextConfig = PretextConfig()
    eval: EvalConfig = EvalConfig()

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA, "seed": self.seed, "dataset": self.dataset.to_dict()}
        for name in ("augment", "detector", "train", "pretext", "eval"):
            section = _plain(asdict(getattr(self, name)))
            for k in _DERIVED.get(name, ()):
                section.pop(k, None)
            d[name] = section
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return parse_config(d)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """``sections`` maps a section name to a dict of field overrides."""
        d = self.to_dict()
        for name, values in sections.items():
            if name == "seed":
                d["seed"] = values
            else:
                d[name] = {**d[name], **values}
        return parse_config(d)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


# -- strict parsing -----------------------------------------------------------------

def _check_value(path: str, value, default):
    """Type-check ``value`` against the shape of ``default``; returns the coerced value."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(path, f"expected a finite number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        if default:
            proto = default[0]
            return tuple(_check_value(f"{path}[{i}]", v, proto) for i, v in enumerate(value))
        return tuple(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {value!r}")
        return value
    return value


def _section(path: str, raw, cls, defaults_obj, derived=()):
    if not isinstance(raw, dict):
        raise ConfigError(path, f"expected an object, got {raw!r}")
    known = {f.name for f in fields(cls)} - set(derived)
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown field")
    values = {}
    for key, value in raw.items():
        default = getattr(defaults_obj, key)
        if default is None:          # optional list fields
            if value is not None and not isinstance(value, list):
                raise ConfigError(f"{path}.{key}", f"expected a list or null, got {value!r}")
            values[key] = None if value is None else tuple(_check_value(f"{path}.{key}[{i}]", v, "")
                                                           for i, v in enumerate(value))
        else:
            values[key] = _check_value(f"{path}.{key}", value, default)
    return values


def _build(path: str, cls, values: dict, base=None):
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        bad = next((k for k in values if k in str(exc)), None)
        raise ConfigError(f"{path}.{bad}" if bad else path, str(exc)) from None


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    allowed = {"schema", "seed", "dataset", "augment", "detector", "train", "pretext", "eval"}
    for key in raw:
        if key not in allowed:
            raise ConfigError(key, "unknown field")
    if "schema" not in raw:
        raise ConfigError("schema", f"missing; expected {SCHEMA}")
    if raw["schema"] != SCHEMA:
        raise ConfigError("schema", f"unsupported version {raw['schema']!r}; expected {SCHEMA}")
    seed = _check_value("seed", raw.get("seed", 0), 0)
    if seed < 0:
        raise ConfigError("seed", "must be non-negative")

    base = ExperimentConfig()
    ds_raw = dict(raw.get("dataset", {}))
    if not isinstance(ds_raw, dict):
        raise ConfigError("dataset", "expected an object")
    scene_raw = ds_raw.pop("scene", {})
    from .synthdata import SceneConfig
    scene = _build("dataset.scene", SceneConfig, _section("dataset.scene", scene_raw, SceneConfig, SceneConfig()))
    ds_vals = _section("dataset", ds_raw, DatasetConfig, base.dataset, derived=("scene",))
    if "target_train" in ds_vals:
        tt = ds_vals["target_train"]
        for name, n in tt.items():
            if name not in TARGET_DOMAINS:
                raise ConfigError(f"dataset.target_train.{name}", f"unknown domain; expected one of {TARGET_DOMAINS}")
            _check_value(f"dataset.target_train.{name}", n, 0)
            if n < 1:
                raise ConfigError(f"dataset.target_train.{name}", "must be at least 1")
    for key in ("source_train", "source_test", "target_test"):
        if key in ds_vals and ds_vals[key] < 1:
            raise ConfigError(f"dataset.{key}", "must be at least 1")
    dataset = _build("dataset", DatasetConfig, {**ds_vals, "scene": scene})

    sections = {}
    for name, cls in (("augment", AugmentConfig), ("detector", FusionDetectorConfig), ("train", TrainConfig),
                      ("pretext", PretextConfig), ("eval", EvalConfig)):
        default_obj = getattr(base, name)
        vals = _section(name, raw.get(name, {}), cls, default_obj, _DERIVED.get(name, ()))
        sections[name] = _build(name, cls, vals, default_obj)
    train_cfg = sections["train"]
    for t in train_cfg.targets:
        if t not in TARGET_DOMAINS:
            raise ConfigError("train.targets", f"unknown domain {t!r}; expected a subset of {TARGET_DOMAINS}")
    return ExperimentConfig(seed=seed, dataset=dataset, **sections)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"not valid JSON ({exc})") from None
    return parse_config(raw)


# -- presets ------------------------------------------------------------------------

@dataclass(frozen=True)
class PresetRow:
    name: str
    toggle: str                  # human-readable description of what this row changes
    overrides: dict              # section -> field overrides
    cumulative: bool = True      # applied on top of the previous row, or on the preset base


def _all_off():
    return {"train": {"use_augment": False, "use_discriminator": False, "use_ssl": False, "balanced": False},
            "detector": {"entropy_mode": "separate", "feature_source": "fused"}}


PRESETS: dict[str, dict] = {
    # cumulative Table 2 configurations on multi-target adaptation
    "table2": {
        "base": {"train": {"mode": "mtda", "targets": list(TARGET_DOMAINS), "use_feature_matching": True}},
        "rows": [
            PresetRow("A", "baseline entropy fusion (separate entropy maps)", _all_off()),
            PresetRow("B", "+ maximum entropy fusion", {"detector": {"entropy_mode": "max"}}),
            PresetRow("C", "+ modality-specific augmentations", {"train": {"use_augment": True}}),
            PresetRow("D", "+ multi-scale discriminators", {"train": {"use_discriminator": True}}),
            PresetRow("E", "+ self-supervised pretext stage", {"train": {"use_ssl": True}}),
            PresetRow("F", "+ domain-balanced target sampling", {"train": {"balanced": True}}),
        ],
    },
    # discriminator input ablation, clear_day -> dense_fog, warm-up only
    "table3": {
        "base": {"train": {"mode": "stda", "targets": ["dense_fog"], "use_ssl": False, "use_augment": True,
                           "use_discriminator": True, "use_feature_matching": True}},
        "rows": [
            PresetRow("entropy_fusion", "no discriminators, separate entropy maps",
                      {"train": {"use_discriminator": False}, "detector": {"entropy_mode": "separate"}},
                      cumulative=False),
            PresetRow("from_rgb", "discriminators on RGB-branch features weighted by RGB entropy",
                      {"detector": {"entropy_mode": "separate", "feature_source": "rgb"}}, cumulative=False),
            PresetRow("from_lidar", "discriminators on lidar-branch features weighted by depth entropy",
                      {"detector": {"entropy_mode": "separate", "feature_source": "depth"}}, cumulative=False),
            PresetRow("max_entropy", "fused features weighted by the max-entropy map",
                      {"detector": {"entropy_mode": "max", "feature_source": "fused"}}, cumulative=False),
            PresetRow("max_entropy_no_fm", "max entropy without the feature-matching loss",
                      {"detector": {"entropy_mode": "max", "feature_source": "fused"},
                       "train": {"use_feature_matching": False}}, cumulative=False),
        ],
    },
    # pretext task ablation, clear_day -> dense_fog, no adversarial warm-up, no max entropy
    "table4": {
        "base": {"train": {"mode": "stda", "targets": ["dense_fog"], "use_discriminator": False, "use_ssl": True,
                           "use_augment": True},
                 "detector": {"entropy_mode": "separate"}},
        "rows": [
            PresetRow("entropy_fusion", "no pretext stage", {"train": {"use_ssl": False}}, cumulative=False),
            PresetRow("patch_rotation", "patch rotation only", {"pretext": {"tasks": ["rotation"]}}, cumulative=False),
            PresetRow("jigsaw", "jigsaw only", {"pretext": {"tasks": ["jigsaw"]}}, cumulative=False),
            PresetRow("translation", "translation only", {"pretext": {"tasks": ["translation"]}}, cumulative=False),
            PresetRow("all_tasks", "patch rotation + jigsaw + translation",
                      {"pretext": {"tasks": list(TASKS)}}, cumulative=False),
        ],
    },
}


def _merge(d: dict, overrides: dict) -> dict:
    out = copy.deepcopy(d)
    for section, values in overrides.items():
        if isinstance(values, dict):
            out[section] = {**out.get(section, {}), **values}
        else:
            out[section] = values
    return out


def preset_configs(name: str, base: ExperimentConfig) -> list[tuple[PresetRow, ExperimentConfig]]:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    preset = PRESETS[name]
    start = _merge(base.to_dict(), preset["base"])
    rows, current = [], start
    for row in preset["rows"]:
        current = _merge(current if row.cumulative else start, row.overrides)
        rows.append((row, parse_config(current)))
    return rows


# -- pipeline -----------------------------------------------------------------------

def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def gen_data(cfg: ExperimentConfig, data_dir, domains=None) -> DatasetIndex:
    if domains is not None:
        unknown = [d for d in domains if d != "clear_day" and d not in cfg.dataset.target_train]
        if unknown:
            raise ConfigError("domains", f"{unknown} not configured in dataset.target_train")
        domains = ["clear_day"] + [d for d in domains if d != "clear_day"]
    index = generate_dataset(data_dir, cfg.dataset, seed=cfg.seed, domains=domains)
    write_json(Path(data_dir) / "experiment.json", {"config": cfg.to_dict(), "config_hash": cfg.config_hash})
    return index


def train_run(cfg: ExperimentConfig, data_dir, run_dir, log_every: int = 0):
    index = DatasetIndex.load(data_dir)
    run_dir = Path(run_dir)
    write_json(run_dir / "config.json", {"config": cfg.to_dict(), "config_hash": cfg.config_hash})
    train_cfg = replace(cfg.train, seed=cfg.seed)
    augment = replace(cfg.augment, rng_seed=cfg.seed)
    return train(train_cfg, index, run_dir, det_cfg=cfg.detector, augment=augment, pretext=cfg.pretext,
                 meta={"config_hash": cfg.config_hash}, log_every=log_every)


def eval_run(cfg: ExperimentConfig, data_dir, run_dir, domains=None, allow_hash_mismatch: bool = False) -> EvalReport:
    index = DatasetIndex.load(data_dir)
    run_dir = Path(run_dir)
    domains = list(domains or cfg.eval.domains or index.domains)
    report = evaluate(run_dir / "checkpoint", index, domains, split=cfg.eval.split,
                      allow_hash_mismatch=allow_hash_mismatch, conf_threshold=cfg.eval.conf_threshold,
                      nms_iou=cfg.eval.nms_iou)
    report.meta["config_hash"] = cfg.config_hash
    report.write(run_dir)
    return report


def ablate(name: str, base: ExperimentConfig, data_dir, out_dir, log=print) -> dict:
    out_dir = Path(out_dir)
    rows = []
    for row, cfg in preset_configs(name, base):
        run_dir = out_dir / row.name
        log(f"[{name}] {row.name}: {row.toggle}")
        train_run(cfg, data_dir, run_dir)
        report = eval_run(cfg, data_dir, run_dir)
        rows.append({"name": row.name, "toggle": row.toggle, "config_hash": cfg.config_hash,
                     "domain_mean": {d: _r(report.domain_mean(d)) for d in report.ap},
                     "overall_target_mean": _r(report.overall_mean)})
    result = {"preset": name, "config_hash": base.config_hash, "rows": rows}
    write_json(out_dir / "comparison.json", result)
    (out_dir / "comparison.txt").write_text(comparison_table(result) + "\n")
    return result


def _r(x):
    return None if x is None or math.isnan(x) else round(float(x), 6)


def comparison_table(result: dict) -> str:
    domains = list(result["rows"][0]["domain_mean"]) if result["rows"] else []
    head = ["row"] + domains + ["target_mean"]
    lines = [head]
    for r in result["rows"]:
        cells = [r["name"]] + ["-" if r["domain_mean"][d] is None else f"{r['domain_mean'][d]:.1f}" for d in domains]
        m = r["overall_target_mean"]
        lines.append(cells + ["-" if m is None else f"{m:.1f}"])
    width = [max(len(line[i]) for line in lines) for i in range(len(head))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(line, width)) for line in lines)


# -- previews -----------------------------------------------------------------------

def _depth_image(depth: np.ndarray, d_max: float) -> np.ndarray:
    return np.clip(depth / d_max, 0.0, 1.0)


def augment_preview(cfg: ExperimentConfig, out_dir, count: int = 4) -> Path:
    """Clear-day frames next to their augmented versions, with the drawn boxes listed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d_max = cfg.dataset.scene.d_max
    rng = np.random.default_rng([cfg.seed, 1])
    note = f"config_hash={cfg.config_hash}"
    listing = []
    for i in range(count):
        clean = make_sample(cfg.seed, "clear_day", "train", i, cfg.dataset).with_entropy(d_max)
        aug = augment_source(clean, rng, d_max, cfg.augment)
        for tag, s in (("orig", clean), ("aug", aug)):
            write_ppm(out_dir / f"{i:03d}_{tag}.rgb.ppm", s.rgb, note)
            write_pgm(out_dir / f"{i:03d}_{tag}.depth.pgm", _depth_image(s.depth, d_max), note)
            write_pgm(out_dir / f"{i:03d}_{tag}.entropy.pgm", s.e_max, note)
        listing.append({"frame": i, "boxes_before": clean.boxes.tolist(), "boxes_after": aug.boxes.tolist(),
                        "valid_before": int(clean.valid_mask.sum()), "valid_after": int(aug.valid_mask.sum())})
    return write_json(out_dir / "augment_preview.json", {"config_hash": cfg.config_hash, "frames": listing})


def pretext_preview(cfg: ExperimentConfig, out_dir, count: int = 2) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d_max = cfg.dataset.scene.d_max
    rng = np.random.default_rng([cfg.seed, 2])
    note = f"config_hash={cfg.config_hash}"
    listing = []
    for i in range(count):
        s = make_sample(cfg.seed, "clear_day", "train", i, cfg.dataset).with_entropy(d_max)
        write_ppm(out_dir / f"{i:03d}_orig.rgb.ppm", s.rgb, note)
        for task in cfg.pretext.tasks:
            b = apply_task(task, s, rng, cfg.pretext)
            write_ppm(out_dir / f"{i:03d}_{task}.rgb.ppm", b.sample.rgb, note)
            write_pgm(out_dir / f"{i:03d}_{task}.depth.pgm", _depth_image(b.sample.depth, d_max), note)
            listing.append({"frame": i, "task": task, "labels": b.labels.tolist()})
    return write_json(out_dir / "pretext_preview.json", {"config_hash": cfg.config_hash, "items": listing})


__all__ = [
    "MODES",
    "PRESETS",
    "ConfigError",
    "EvalConfig",
    "ExperimentConfig",
    "PresetRow",
    "ablate",
    "augment_preview",
    "comparison_table",
    "eval_run",
    "gen_data",
    "load_config",
    "parse_config",
    "pretext_preview",
    "preset_configs",
    "train_run",
]
