"""Self-supervised pretext tasks on paired rasters plus their grid classifiers.

Every task applies one transform to all rasters of a sample (rgb, depth,
mask and the entropy maps) and returns a grid of 4-way labels:

* patch rotation: m x n square patches, each rotated by k * 90 degrees, label k
* jigsaw: 2 x 2 patches shuffled, label = original index of the patch now at p
* translation: horizontal circular shift by k * W/4, a single label k
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, nn, ops
from .sample import Sample

TASKS = ("rotation", "jigsaw", "translation")
RASTERS = ("rgb", "depth", "valid_mask", "e_rgb", "e_depth", "e_max")


@dataclass(frozen=True)
class PretextConfig:
    tasks: tuple = TASKS
    rotation_grid: tuple = (3, 3)
    jigsaw_grid: tuple = (2, 2)
    head_width: int = 32

    def __post_init__(self):
        unknown = [t for t in self.tasks if t not in TASKS]
        if unknown or not self.tasks:
            raise ValueError(f"pretext tasks must be a non-empty subset of {TASKS}, got {self.tasks}")
        if tuple(self.jigsaw_grid) != (2, 2):
            raise ValueError("jigsaw uses a 2x2 grid")

    def grid(self, task: str) -> tuple[int, int]:
        return {"rotation": tuple(self.rotation_grid), "jigsaw": tuple(self.jigsaw_grid),
                "translation": (1, 1)}[task]


@dataclass
class PretextBatch:
    sample: Sample           # transformed rasters (labels and entropy maps carried along)
    task: str
    labels: np.ndarray       # int grid


def _rasters(sample: Sample) -> dict:
    return {k: getattr(sample, k) for k in RASTERS if getattr(sample, k) is not None}


def _transformed(sample: Sample, rasters: dict) -> Sample:
    # box labels do not survive the transform and are never used by pretext training
    return replace(sample, boxes=np.zeros((0, 4), np.float32), classes=np.zeros(0, np.int64), **rasters)


def _patches_view(a: np.ndarray, m: int, n: int) -> np.ndarray:
    """(..., H, W) -> (..., m, n, ph, pw) copy."""
    h, w = a.shape[-2:]
    ph, pw = h // m, w // n
    lead = a.shape[:-2]
    v = a.reshape(lead + (m, ph, n, pw))
    return np.moveaxis(v, -3, -2).copy()


def _assemble(p: np.ndarray) -> np.ndarray:
    m, n, ph, pw = p.shape[-4:]
    lead = p.shape[:-4]
    return np.moveaxis(p, -2, -3).reshape(lead + (m * ph, n * pw))


# -- patch rotation ------------------------------------------------------------------

def rotate_patches(a: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Rotate patch (i, j) of a (..., H, W) raster by ks[i, j] quarter turns (counter-clockwise)."""
    m, n = ks.shape
    h, w = a.shape[-2:]
    if h % m or w % n or h // m != w // n:
        raise ValueError(f"{m}x{n} grid on a {h}x{w} frame does not give square patches")
    p = _patches_view(a, m, n)
    for i in range(m):
        for j in range(n):
            p[..., i, j, :, :] = np.rot90(p[..., i, j, :, :], int(ks[i, j]), axes=(-2, -1))
    return _assemble(p)


def apply_patch_rotation(sample: Sample, m: int, n: int, rng: np.random.Generator,
                         ks: np.ndarray | None = None) -> PretextBatch:
    h, w = sample.height, sample.width
    if h % m or w % n or h // m != w // n:
        raise ValueError(f"{m}x{n} grid on a {h}x{w} frame does not give square patches")
    ks = rng.integers(0, 4, size=(m, n)) if ks is None else np.asarray(ks)
    out = {k: rotate_patches(v, ks) for k, v in _rasters(sample).items()}
    return PretextBatch(_transformed(sample, out), "rotation", ks.astype(np.int64))


def invert_patch_rotation(a: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return rotate_patches(a, (-np.asarray(labels)) % 4)


# -- jigsaw ----------------------------------------------------------------------------

def permute_patches(a: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Position p receives original patch labels[p] (labels in raster order over the grid)."""
    m, n = labels.shape
    p = _patches_view(a, m, n)
    flat = p.reshape(p.shape[:-4] + (m * n,) + p.shape[-2:])
    out = flat[..., labels.ravel(), :, :]
    return _assemble(out.reshape(p.shape))


def apply_jigsaw(sample: Sample, rng: np.random.Generator, perm: np.ndarray | None = None,
                 grid: tuple = (2, 2)) -> PretextBatch:
    m, n = grid
    if sample.height % m or sample.width % n:
        raise ValueError(f"{m}x{n} jigsaw grid does not divide a {sample.height}x{sample.width} frame")
    perm = rng.permutation(m * n) if perm is None else np.asarray(perm)
    labels = perm.reshape(m, n).astype(np.int64)
    out = {k: permute_patches(v, labels) for k, v in _rasters(sample).items()}
    return PretextBatch(_transformed(sample, out), "jigsaw", labels)


def invert_jigsaw(a: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return permute_patches(a, np.argsort(labels.ravel()).reshape(labels.shape))


# -- translation -----------------------------------------------------------------------

def apply_translation(sample: Sample, rng: np.random.Generator, k: int | None = None) -> PretextBatch:
    w = sample.width
    if w % 4:
        raise ValueError(f"frame width {w} is not divisible by 4")
    k = int(rng.integers(0, 4)) if k is None else int(k)
    shift = k * w // 4
    out = {name: np.roll(v, shift, axis=-1) for name, v in _rasters(sample).items()}
    return PretextBatch(_transformed(sample, out), "translation", np.array([[k]], dtype=np.int64))


def invert_translation(a: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.roll(a, -int(labels.ravel()[0]) * a.shape[-1] // 4, axis=-1)


def apply_task(task: str, sample: Sample, rng: np.random.Generator, cfg: PretextConfig = PretextConfig()) -> PretextBatch:
    if task == "rotation":
        return apply_patch_rotation(sample, *cfg.rotation_grid, rng)
    if task == "jigsaw":
        return apply_jigsaw(sample, rng, grid=cfg.jigsaw_grid)
    if task == "translation":
        return apply_translation(sample, rng)
    raise ValueError(f"unknown pretext task {task!r}")


def invert_task(task: str, a: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return {"rotation": invert_patch_rotation, "jigsaw": invert_jigsaw,
            "translation": invert_translation}[task](a, labels)


class TaskSampler:
    """Uniform stream over the configured tasks."""

    def __init__(self, tasks, rng: np.random.Generator):
        self.tasks = tuple(tasks)
        if not self.tasks:
            raise ValueError("no pretext tasks configured")
        self.rng = rng

    def draw(self) -> str:
        return self.tasks[int(self.rng.integers(0, len(self.tasks)))]


# -- SSL heads -------------------------------------------------------------------------

class SSLHead(nn.Module):
    """Three 3x3 convs (the first with stride 2), block pooling onto the label grid, 1x1 classifier."""

    def __init__(self, in_ch: int, grid: tuple[int, int], rng: np.random.Generator, width: int = 32):
        self.grid = tuple(grid)
        self.convs = [nn.ConvBlock(in_ch, width, 3, rng, stride=2),
                      nn.ConvBlock(width, width, 3, rng),
                      nn.ConvBlock(width, width, 3, rng)]
        self.classify = nn.Conv2d(width, 4, 1, rng, padding=0)

    def forward(self, features) -> Tensor:
        x = features
        for conv in self.convs:
            x = conv(x)
        gh, gw = self.grid
        h, w = x.shape[2:]
        if h % gh or w % gw or h // gh != w // gw:
            raise ValueError(f"SSL head map {h}x{w} cannot be pooled onto a {gh}x{gw} label grid")
        x = ops.avg_pool2d(x, h // gh)
        return self.classify(x)


def make_ssl_heads(in_ch: int, cfg: PretextConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng([seed, 11])
    return {t: SSLHead(in_ch, cfg.grid(t), rng, cfg.head_width) for t in cfg.tasks}
