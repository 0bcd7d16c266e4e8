"""Checkpoint directory: one MDT1 file per tensor plus manifest.json."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..autodiff import serialize

MANIFEST = "manifest.json"


def save_checkpoint(path, modules: dict, meta: dict) -> Path:
    """``modules`` maps a prefix (e.g. "detector") to an nn.Module."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for prefix, module in modules.items():
        for name, value in module.state_dict().items():
            key = f"{prefix}.{name}"
            fname = key + ".mdt"
            serialize.save(path / fname, np.asarray(value))
            tensors[key] = {"file": fname, "shape": list(np.shape(value))}
    manifest = dict(meta)
    manifest["modules"] = sorted(modules)
    manifest["tensors"] = tensors
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    p = Path(path) / MANIFEST
    if not p.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {p}")
    return json.loads(p.read_text())


def load_state(path, prefix: str) -> dict:
    path = Path(path)
    manifest = read_manifest(path)
    if prefix not in manifest["modules"]:
        raise KeyError(f"checkpoint at {path} has no module {prefix!r}")
    state = {}
    for key, entry in manifest["tensors"].items():
        if key.startswith(prefix + "."):
            state[key[len(prefix) + 1:]] = serialize.load(path / entry["file"])
    return state
