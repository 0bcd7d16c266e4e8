"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-4) -> np.ndarray:
    """d fn() / d t by central differences, perturbing ``t.data`` in place."""
    grad = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(fn().data)
        flat[i] = orig - step
        down = float(fn().data)
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-4) -> float:
    """Worst relative error between reverse-mode and finite-difference gradients.

    ``fn`` must rebuild the graph from ``inputs`` on every call and return a scalar.
    Run under float64.
    """
    for t in inputs:
        t.grad = None
    backward(fn())
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numerical_grad(fn, t, step)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
