"""The per-frame record shared by every stage of the pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .entropy import entropy_maps

CLASS_NAMES = ("car", "pedestrian", "ridable")
NUM_CLASSES = len(CLASS_NAMES)


@dataclass
class Sample:
    rgb: np.ndarray                       # 3xHxW float32 in [0, 1]
    depth: np.ndarray                     # HxW float32 metres, 0 where invalid
    valid_mask: np.ndarray                # HxW bool
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), np.float32))
    classes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    domain: str = "clear_day"
    eval_only_labels: bool = False
    e_rgb: np.ndarray | None = None
    e_depth: np.ndarray | None = None
    e_max: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.rgb.shape[1]

    @property
    def width(self) -> int:
        return self.rgb.shape[2]

    def with_entropy(self, d_max: float) -> "Sample":
        e_rgb, e_depth, e_max = entropy_maps(self.rgb, self.depth, self.valid_mask, d_max)
        return replace(self, e_rgb=e_rgb.astype(np.float32), e_depth=e_depth.astype(np.float32),
                       e_max=e_max.astype(np.float32))

    def copy(self) -> "Sample":
        def c(a):
            return None if a is None else a.copy()

        return replace(self, rgb=self.rgb.copy(), depth=self.depth.copy(), valid_mask=self.valid_mask.copy(),
                       boxes=self.boxes.copy(), classes=self.classes.copy(),
                       e_rgb=c(self.e_rgb), e_depth=c(self.e_depth), e_max=c(self.e_max))

    def validate(self) -> None:
        h, w = self.height, self.width
        if self.depth.shape != (h, w) or self.valid_mask.shape != (h, w):
            raise ValueError("depth/mask dims do not match rgb")
        if np.any(self.depth[~self.valid_mask] != 0):
            raise ValueError("depth must be zero wherever the mask is invalid")
        b = self.boxes
        if len(b) and not (np.all(b[:, 0] >= 0) and np.all(b[:, 0] < b[:, 2]) and np.all(b[:, 2] <= w)
                           and np.all(b[:, 1] >= 0) and np.all(b[:, 1] < b[:, 3]) and np.all(b[:, 3] <= h)):
            raise ValueError(f"box outside frame or degenerate: {b}")
