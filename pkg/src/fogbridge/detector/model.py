"""Two-branch RGB + lidar detector joined by entropy-gated fusion modules.

Layout on a 96x96 frame (strides in brackets)::

    rgb   -> stem[2] -> stage1[4] -> stage2[8]  -> stage3[16] -> stage4[32]
    lidar -> stem[2] -> stage1[4] -> stage2[8]  -> stage3[16] -> stage4[32]
                           |            |             |             |
                         fuse         fuse          fuse          fuse

After each stage the two branch features are gated by the entropy map,
concatenated and squeezed back to one branch width; that fused map feeds both
branches. A small top-down head builds P5, P4, P3 with one more fusion module
per scale and a 1x1 prediction conv (one anchor, 5 + classes channels).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from ..autodiff import Tensor, as_tensor, nn, ops
from ..entropy import downscale_entropy
from ..sample import NUM_CLASSES

ENTROPY_MODES = ("max", "rgb", "depth", "separate")
FEATURE_SOURCES = ("fused", "rgb", "depth")


@dataclass(frozen=True)
class FusionDetectorConfig:
    widths: tuple = (16, 32, 64, 128)
    stem_width: int = 8
    head_widths: tuple = (32, 64, 64)        # P3, P4, P5
    num_classes: int = NUM_CLASSES
    # (w, h) prior per scale, P3..P5; replaced by k-means priors before training
    anchors: tuple = ((8.0, 16.0), (16.0, 16.0), (26.0, 14.0))
    strides: tuple = (8, 16, 32)
    entropy_mode: str = "max"                # which entropy map drives the fusion gates
    feature_source: str = "fused"            # which P3..P5 features are exposed to discriminators
    gate_init: tuple = (4.0, -2.0)           # initial gate conv weight and bias
    d_max: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if len(self.widths) != 4:
            raise ValueError(f"widths must list 4 stages, got {len(self.widths)}")
        if len(self.anchors) != 3 or len(self.strides) != 3 or len(self.head_widths) != 3:
            raise ValueError("exactly three detection scales are required")
        if tuple(self.strides) != (8, 16, 32):
            raise ValueError(f"strides must be (8, 16, 32), got {self.strides}")
        if self.entropy_mode not in ENTROPY_MODES:
            raise ValueError(f"entropy_mode must be one of {ENTROPY_MODES}, got {self.entropy_mode!r}")
        if self.feature_source not in FEATURE_SOURCES:
            raise ValueError(f"feature_source must be one of {FEATURE_SOURCES}, got {self.feature_source!r}")

    @property
    def outputs_per_anchor(self) -> int:
        return 5 + self.num_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchors"] = [list(a) for a in self.anchors]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionDetectorConfig":
        d = dict(d)
        for key in ("widths", "head_widths", "strides", "gate_init"):
            if key in d:
                d[key] = tuple(d[key])
        if "anchors" in d:
            d["anchors"] = tuple(tuple(float(v) for v in a) for a in d["anchors"])
        return cls(**d)


class EntropyFusionModule(nn.Module):
    """gate = sigmoid(conv1x1(entropy)); out = ConvBlock1x1([gate*a, gate*b]) with C channels."""

    def __init__(self, channels: int, rng: np.random.Generator, gate_init=(4.0, -2.0)):
        self.channels = channels
        self.gate = nn.Conv2d(1, channels, 1, rng, padding=0)
        self.gate.weight.data[...] = gate_init[0]
        self.gate.bias.data[...] = gate_init[1]
        self.merge = nn.ConvBlock(2 * channels, channels, 1, rng, act="relu")

    def gates(self, entropy) -> Tensor:
        return ops.sigmoid(self.gate(entropy))

    def gated(self, a: Tensor, b: Tensor, e_a, e_b=None):
        """Both branch features multiplied by their gate (``e_b`` defaults to ``e_a``)."""
        ga = self.gates(e_a)
        gb = ga if e_b is None else self.gates(e_b)
        return ops.mul(a, ga), ops.mul(b, gb)

    def forward(self, a: Tensor, b: Tensor, e_a, e_b=None) -> Tensor:
        if a.shape != b.shape or a.shape[1] != self.channels:
            raise ValueError(f"fusion expects two [N,{self.channels},H,W] inputs, got {a.shape} and {b.shape}")
        ga, gb = self.gated(a, b, e_a, e_b)
        return self.merge(ops.concat([ga, gb], axis=1))


class Branch(nn.Module):
    """One modality's stem plus its four stage convolutions."""

    def __init__(self, in_ch: int, cfg: FusionDetectorConfig, rng: np.random.Generator):
        self.stem = nn.ConvBlock(in_ch, cfg.stem_width, 3, rng, stride=2)
        chans = (cfg.stem_width,) + tuple(cfg.widths)
        self.stages = [nn.ConvBlock(chans[i], chans[i + 1], 3, rng, stride=2) for i in range(4)]


class DetectorOutput(NamedTuple):
    grids: list          # P3, P4, P5 raw predictions, each [N, 5+C, H/s, W/s]
    features: list       # f^1..f^3 exposed to the discriminators (per feature_source)
    fused: list          # post-fusion head features at P3..P5


class FusionDetector(nn.Module):
    RGB_CHANNELS = 3
    DEPTH_CHANNELS = 2   # normalized depth and the valid mask

    def __init__(self, cfg: FusionDetectorConfig = FusionDetectorConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.rgb = Branch(self.RGB_CHANNELS, cfg, rng)
        self.lidar = Branch(self.DEPTH_CHANNELS, cfg, rng)
        self.backbone_fusion = [EntropyFusionModule(w, rng, cfg.gate_init) for w in cfg.widths]

        h3, h4, h5 = cfg.head_widths
        w2, w3, w4 = cfg.widths[1], cfg.widths[2], cfg.widths[3]
        # per-branch lateral/top-down convs, then a fusion module per scale
        self.rgb_p5 = nn.ConvBlock(w4, h5, 1, rng)
        self.lidar_p5 = nn.ConvBlock(w4, h5, 1, rng)
        self.rgb_p4 = nn.ConvBlock(w3 + h5, h4, 3, rng)
        self.lidar_p4 = nn.ConvBlock(w3 + h5, h4, 3, rng)
        self.rgb_p3 = nn.ConvBlock(w2 + h4, h3, 3, rng)
        self.lidar_p3 = nn.ConvBlock(w2 + h4, h3, 3, rng)
        self.head_fusion = [EntropyFusionModule(c, rng, cfg.gate_init) for c in (h3, h4, h5)]
        k = cfg.outputs_per_anchor
        self.predict = [nn.Conv2d(c, k, 1, rng, padding=0) for c in (h3, h4, h5)]
        for conv in self.predict:
            conv.weight.data *= 0.1
            conv.bias.data[4] = -4.0   # low prior objectness keeps early losses tame

    @property
    def anchors(self) -> np.ndarray:
        return np.asarray(self.cfg.anchors, dtype=np.float64)

    @property
    def strides(self) -> tuple:
        return tuple(self.cfg.strides)

    def encode_depth(self, depth: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """[N,H,W] metres and mask -> [N,2,H,W] lidar-branch input."""
        d = np.asarray(depth, dtype=np.float32) / np.float32(self.cfg.d_max)
        return np.stack([d, np.asarray(mask, dtype=np.float32)], axis=1)

    def _gate_sources(self, e_max, e_rgb, e_depth):
        mode = self.cfg.entropy_mode
        need = {"max": ("e_max",), "rgb": ("e_rgb",), "depth": ("e_depth",),
                "separate": ("e_rgb", "e_depth")}[mode]
        given = {"e_max": e_max, "e_rgb": e_rgb, "e_depth": e_depth}
        for name in need:
            if given[name] is None:
                raise ValueError(f"entropy_mode {mode!r} needs {name}")
        if mode == "separate":
            return e_rgb, e_depth
        return given[need[0]], None

    @staticmethod
    def _pyramid(e, factors):
        if e is None:
            return [None] * len(factors)
        e = np.asarray(e, dtype=np.float32)
        if e.ndim == 3:
            e = e[:, None]
        return [downscale_entropy(e, f).astype(np.float32) for f in factors]

    def forward(self, rgb, depth, e_max=None, e_rgb=None, e_depth=None) -> DetectorOutput:
        """``rgb`` [N,3,H,W] in [0,1]; ``depth`` [N,2,H,W] from encode_depth; entropy maps [N,H,W]."""
        rgb = ops.sub(as_tensor(rgb), 0.5)
        depth = as_tensor(depth)
        n, c, h, w = rgb.shape
        if c != self.RGB_CHANNELS or depth.shape != (n, self.DEPTH_CHANNELS, h, w):
            raise ValueError(f"expected rgb [N,3,H,W] and depth [N,2,H,W], got {rgb.shape} and {depth.shape}")
        if h % 32 or w % 32:
            raise ValueError(f"frame {h}x{w} must be divisible by 32")
        src_a, src_b = self._gate_sources(e_max, e_rgb, e_depth)
        for e in (src_a, src_b):
            if e is not None and np.shape(e)[-2:] != (h, w):
                raise ValueError(f"entropy map {np.shape(e)} does not match frame {h}x{w}")
        factors = (4, 8, 16, 32)
        pa, pb = self._pyramid(src_a, factors), self._pyramid(src_b, factors)

        a = self.rgb.stem(rgb)
        b = self.lidar.stem(depth)
        taps = []
        for i in range(4):
            a = self.rgb.stages[i](a)
            b = self.lidar.stages[i](b)
            fused = self.backbone_fusion[i](a, b, pa[i], pb[i])
            a = b = fused
            taps.append(fused)
        _, c2, c3, c4 = taps

        ra5, rb5 = self.rgb_p5(c4), self.lidar_p5(c4)
        f5 = self.head_fusion[2](ra5, rb5, pa[3], pb[3])
        up5 = ops.upsample_nearest(f5, 2)
        ra4 = self.rgb_p4(ops.concat([c3, up5], axis=1))
        rb4 = self.lidar_p4(ops.concat([c3, up5], axis=1))
        f4 = self.head_fusion[1](ra4, rb4, pa[2], pb[2])
        up4 = ops.upsample_nearest(f4, 2)
        ra3 = self.rgb_p3(ops.concat([c2, up4], axis=1))
        rb3 = self.lidar_p3(ops.concat([c2, up4], axis=1))
        f3 = self.head_fusion[0](ra3, rb3, pa[1], pb[1])

        fused = [f3, f4, f5]
        grids = [conv(f) for conv, f in zip(self.predict, fused)]
        source = self.cfg.feature_source
        features = fused if source == "fused" else ([ra3, ra4, ra5] if source == "rgb" else [rb3, rb4, rb5])
        return DetectorOutput(grids, features, fused)

    def run(self, rgb: np.ndarray, depth: np.ndarray, mask: np.ndarray, e_rgb=None, e_depth=None, e_max=None):
        """Convenience wrapper over numpy batch arrays."""
        return self.forward(np.asarray(rgb, dtype=np.float32), self.encode_depth(depth, mask),
                            e_max=e_max, e_rgb=e_rgb, e_depth=e_depth)
