"""Reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable operation creates a node that remembers its parents and a
closure mapping the output gradient to parent gradients. Nodes are stamped
with a monotonically increasing sequence number when they are recorded, so
the set of nodes reachable from a loss, ordered by that number, is the tape
of executed operations. ``backward`` replays it in reverse.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_state = threading.local()
_counter = itertools.count()


def _enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def get_default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    _state.dtype = np.dtype(dtype)


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the build-wide scalar precision (e.g. float64 for grad checks)."""
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextmanager
def no_grad() -> Iterator[None]:
    prev = _enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional array that can take part in a differentiation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or get_default_dtype())
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self._seq = -1
        self.op = ""

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar; implementations live in ops ----------------------
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __pow__(self, p):
        return _ops().power(self, p)

    def __getitem__(self, idx):
        return _ops().getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops().mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops().transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def _ops():
    from . import ops

    return ops


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op result; attach it to the tape if any parent needs a gradient."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out._seq = -1
    out.op = op
    out.requires_grad = False
    if _enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._seq = next(_counter)
    return out


def tape(loss: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``loss`` in reverse execution order."""
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._backward is None:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda n: n._seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    if loss._backward is None:
        _accumulate(loss, np.ones_like(loss.data))
        return
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in tape(loss):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        grads = node._backward(g)
        for parent, pg in zip(node._parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                _accumulate(parent, pg)
            else:
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _accumulate(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=leaf.data.dtype)
    if g.shape != leaf.data.shape:
        g = np.broadcast_to(g, leaf.data.shape)
    if leaf.grad is None:
        leaf.grad = np.array(g, copy=True)
    else:
        leaf.grad += g
