"""Weather/lighting corruptions that turn clear-day frames into target domains."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..imageio import quantize
from ..sample import Sample


@dataclass(frozen=True)
class DomainSpec:
    name: str
    contrast: float = 1.0        # RGB deviations from the fog colour are scaled by this
    fog_level: float = 0.75      # grey level contrast is compressed toward
    brightness: float = 1.0      # global RGB gain
    noise_sigma: float = 0.0     # additive RGB sensor noise, applied before the gain
    dropout: float = 0.0         # probability a lidar return is lost
    backscatter: float = 0.0     # probability an empty ray returns near-range clutter
    backscatter_depth_frac: float = 0.2

    def is_identity(self) -> bool:
        return (self.contrast == 1.0 and self.brightness == 1.0 and self.noise_sigma == 0.0
                and self.dropout == 0.0 and self.backscatter == 0.0)


DOMAINS: dict[str, DomainSpec] = {
    "clear_day": DomainSpec("clear_day"),
    "light_fog": DomainSpec("light_fog", contrast=0.45, dropout=0.35, backscatter=0.015),
    "dense_fog": DomainSpec("dense_fog", contrast=0.2, fog_level=0.8, dropout=0.7, backscatter=0.03),
    "snow": DomainSpec("snow", contrast=0.6, noise_sigma=0.06, dropout=0.3, backscatter=0.02),
    "night": DomainSpec("night", brightness=0.25, noise_sigma=0.03),
}
TARGET_DOMAINS = ("light_fog", "dense_fog", "snow", "night")


def get_domain(name: str) -> DomainSpec:
    try:
        return DOMAINS[name]
    except KeyError:
        raise ValueError(f"unknown domain {name!r}; known: {sorted(DOMAINS)}") from None


def apply_domain_shift(sample: Sample, spec: DomainSpec | str, rng: np.random.Generator,
                       d_max: float = 50.0) -> Sample:
    """Corrupt a clear-day frame. Labels are kept but flagged evaluation-only."""
    if isinstance(spec, str):
        spec = get_domain(spec)
    if sample.domain != "clear_day":
        raise ValueError(f"domain shift expects a clear_day sample, got {sample.domain!r}")
    if spec.is_identity():
        return replace(sample.copy(), domain=spec.name)

    rgb = sample.rgb.astype(np.float64)
    if spec.contrast != 1.0:
        rgb = spec.fog_level + spec.contrast * (rgb - spec.fog_level)
    if spec.noise_sigma > 0:
        rgb = np.clip(rgb + rng.normal(0.0, spec.noise_sigma, size=rgb.shape), 0.0, 1.0)
    rgb = quantize(np.clip(rgb * spec.brightness, 0.0, 1.0))

    depth = sample.depth.copy()
    mask = sample.valid_mask.copy()
    if spec.dropout > 0:
        drop = mask & (rng.random(mask.shape) < spec.dropout)
        mask &= ~drop
        depth[drop] = 0.0
    if spec.backscatter > 0:
        add = ~mask & (rng.random(mask.shape) < spec.backscatter)
        n = int(add.sum())
        depth[add] = rng.uniform(0.0, spec.backscatter_depth_frac * d_max, size=n).astype(np.float32)
        # uniform(0, b) can return exactly 0, which would read as "no return"
        depth[add] = np.maximum(depth[add], np.float32(1e-3))
        mask |= add

    out = replace(sample, rgb=rgb, depth=depth, valid_mask=mask, boxes=sample.boxes.copy(),
                  classes=sample.classes.copy(), domain=spec.name, eval_only_labels=True)
    return out.with_entropy(d_max)
