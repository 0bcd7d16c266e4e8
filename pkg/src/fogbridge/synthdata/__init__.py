from .dataset import (
    DatasetConfig,
    DatasetIndex,
    SplitData,
    generate_dataset,
    load_sample,
    load_split,
    make_sample,
    save_sample,
)
from .domains import DOMAINS, TARGET_DOMAINS, DomainSpec, apply_domain_shift, get_domain
from .projection import Intrinsics, project_pointcloud
from .sampler import BalancedSampler
from .scene import SceneConfig, generate_scene, render_scene

__all__ = [
    "DOMAINS",
    "TARGET_DOMAINS",
    "BalancedSampler",
    "DatasetConfig",
    "DatasetIndex",
    "DomainSpec",
    "Intrinsics",
    "SceneConfig",
    "SplitData",
    "apply_domain_shift",
    "generate_dataset",
    "generate_scene",
    "get_domain",
    "load_sample",
    "load_split",
    "make_sample",
    "project_pointcloud",
    "render_scene",
    "save_sample",
]
