"""On-disk dataset tree and in-memory split loading.

Layout::

    <root>/index.json
    <root>/<domain>/<split>/<frame_id>.rgb.ppm
    <root>/<domain>/<split>/<frame_id>.depth.mdt
    <root>/<domain>/<split>/<frame_id>.mask.mdt
    <root>/<domain>/<split>/<frame_id>.labels.json
"""
from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import serialize
from ..imageio import read_ppm, write_ppm
from ..sample import Sample
from .domains import TARGET_DOMAINS, apply_domain_shift
from .scene import SceneConfig, generate_scene

SPLITS = ("train", "test")


def _default_target_train() -> dict[str, int]:
    return {"light_fog": 200, "dense_fog": 80, "snow": 200, "night": 200}


@dataclass(frozen=True)
class DatasetConfig:
    scene: SceneConfig = SceneConfig()
    source_train: int = 500
    source_test: int = 100
    target_train: dict = field(default_factory=_default_target_train)
    target_test: int = 100

    def counts(self) -> dict[str, dict[str, int]]:
        out = {"clear_day": {"train": self.source_train, "test": self.source_test}}
        for name, n in self.target_train.items():
            out[name] = {"train": int(n), "test": self.target_test}
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        scene = SceneConfig(**d.pop("scene", {}))
        return cls(scene=scene, **d)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DatasetIndex:
    root: Path
    seed: int
    config: DatasetConfig
    files: dict            # domain -> split -> list of frame ids
    config_hash: str = ""

    def count(self, domain: str, split: str = "train") -> int:
        return len(self.files[domain][split])

    @property
    def domains(self) -> list[str]:
        return list(self.files)

    def path(self, domain: str, split: str, frame_id: str) -> Path:
        return self.root / domain / split / frame_id

    def require(self, domain: str, split: str) -> None:
        if domain not in self.files or split not in self.files[domain]:
            raise FileNotFoundError(f"dataset at {self.root} has no {domain}/{split} split")

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "domains": list(self.files),
            "counts": {d: {s: len(ids) for s, ids in splits.items()} for d, splits in self.files.items()},
            "files": self.files,
        }

    @classmethod
    def load(cls, root) -> "DatasetIndex":
        root = Path(root)
        path = root / "index.json"
        if not path.exists():
            raise FileNotFoundError(f"no dataset index at {path}")
        d = json.loads(path.read_text())
        files = d["files"]
        for dom, splits in files.items():
            for split, ids in splits.items():
                if d["counts"][dom][split] != len(ids):
                    raise ValueError(f"index counts disagree with file listing for {dom}/{split}")
        return cls(root=root, seed=d["seed"], config=DatasetConfig.from_dict(d["config"]),
                   files=files, config_hash=d.get("config_hash", ""))


def sample_rng(seed: int, domain: str, split: str, i: int) -> np.random.Generator:
    """Independent per-frame generator so frames can be produced in any order."""
    return np.random.default_rng([seed, zlib.crc32(domain.encode()), SPLITS.index(split), i])


def make_sample(seed: int, domain: str, split: str, i: int, cfg: DatasetConfig) -> Sample:
    rng = sample_rng(seed, domain, split, i)
    clean = generate_scene(rng, cfg.scene)
    if domain == "clear_day":
        return clean
    return apply_domain_shift(clean, domain, rng, cfg.scene.d_max)


def save_sample(sample: Sample, stem: Path) -> None:
    write_ppm(stem.with_name(stem.name + ".rgb.ppm"), sample.rgb)
    serialize.save(stem.with_name(stem.name + ".depth.mdt"), sample.depth)
    serialize.save(stem.with_name(stem.name + ".mask.mdt"), sample.valid_mask.astype(np.float32))
    labels = [{"class": int(c), "box": [float(v) for v in b]} for c, b in zip(sample.classes, sample.boxes)]
    stem.with_name(stem.name + ".labels.json").write_text(json.dumps(labels))


def load_sample(stem: Path, domain: str, d_max: float) -> Sample:
    rgb = read_ppm(stem.with_name(stem.name + ".rgb.ppm"))
    depth = serialize.load(stem.with_name(stem.name + ".depth.mdt"))
    mask = serialize.load(stem.with_name(stem.name + ".mask.mdt")) > 0.5
    labels = json.loads(stem.with_name(stem.name + ".labels.json").read_text())
    boxes = np.array([l["box"] for l in labels], dtype=np.float32).reshape(-1, 4)
    classes = np.array([l["class"] for l in labels], dtype=np.int64)
    s = Sample(rgb=rgb, depth=depth, valid_mask=mask, boxes=boxes, classes=classes, domain=domain,
               eval_only_labels=domain != "clear_day")
    return s.with_entropy(d_max)


def generate_dataset(root, cfg: DatasetConfig = DatasetConfig(), seed: int = 0,
                     domains=None) -> DatasetIndex:
    root = Path(root)
    counts = cfg.counts()
    if domains is not None:
        counts = {d: counts[d] for d in domains}
    files: dict = {}
    for domain, splits in counts.items():
        files[domain] = {}
        for split, n in splits.items():
            out_dir = root / domain / split
            out_dir.mkdir(parents=True, exist_ok=True)
            ids = []
            for i in range(n):
                frame_id = f"{i:05d}"
                save_sample(make_sample(seed, domain, split, i, cfg), out_dir / frame_id)
                ids.append(frame_id)
            files[domain][split] = ids
    index = DatasetIndex(root=root, seed=seed, config=cfg, files=files,
                         config_hash=config_hash({"dataset": cfg.to_dict(), "seed": seed}))
    (root / "index.json").write_text(json.dumps(index.to_json(), indent=1, sort_keys=True))
    return index


@dataclass
class SplitData:
    """A whole split stacked into arrays for fast batching."""

    domain: str
    rgb: np.ndarray        # N,3,H,W
    depth: np.ndarray      # N,H,W
    mask: np.ndarray       # N,H,W bool
    e_rgb: np.ndarray
    e_depth: np.ndarray
    e_max: np.ndarray
    boxes: list
    classes: list

    def __len__(self) -> int:
        return len(self.rgb)

    def sample(self, i: int) -> Sample:
        return Sample(rgb=self.rgb[i], depth=self.depth[i], valid_mask=self.mask[i],
                      boxes=self.boxes[i], classes=self.classes[i], domain=self.domain,
                      eval_only_labels=self.domain != "clear_day",
                      e_rgb=self.e_rgb[i], e_depth=self.e_depth[i], e_max=self.e_max[i])

    @classmethod
    def from_samples(cls, domain: str, samples: list[Sample]) -> "SplitData":
        return cls(domain=domain,
                   rgb=np.stack([s.rgb for s in samples]),
                   depth=np.stack([s.depth for s in samples]),
                   mask=np.stack([s.valid_mask for s in samples]),
                   e_rgb=np.stack([s.e_rgb for s in samples]),
                   e_depth=np.stack([s.e_depth for s in samples]),
                   e_max=np.stack([s.e_max for s in samples]),
                   boxes=[s.boxes for s in samples],
                   classes=[s.classes for s in samples])


def load_split(index: DatasetIndex, domain: str, split: str) -> SplitData:
    index.require(domain, split)
    d_max = index.config.scene.d_max
    samples = [load_sample(index.path(domain, split, fid), domain, d_max) for fid in index.files[domain][split]]
    if not samples:
        raise ValueError(f"{domain}/{split} is empty")
    return SplitData.from_samples(domain, samples)
