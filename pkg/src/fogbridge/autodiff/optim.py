"""SGD with momentum and Adam, updating parameters in place."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


class Optimizer:
    def __init__(self, params: Sequence[Tensor], lr: float):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _grads(self) -> list[np.ndarray]:
        grads = []
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {i} with shape {p.shape} has no gradient")
            grads.append(p.grad)
        return grads


class SGD(Optimizer):
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, g, v in zip(self.params, self._grads(), self.velocity):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * v


class Adam(Optimizer):
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = self._grads()
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def sgd_step(params: Sequence[Tensor], lr: float, momentum: float = 0.0) -> None:
    """Single stateless SGD update (momentum buffer starts from zero)."""
    SGD(params, lr, momentum).step()


def adam_step(params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    Adam(params, lr, betas, eps).step()
