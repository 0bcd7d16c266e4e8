"""Differentiable operations.

Binary elementwise ops broadcast like numpy; their gradients are summed back
down to each operand's shape. Spatial ops use the NCHW layout.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def _coerce(a, b):
    # plain python/numpy constants follow the dtype of the tensor they combine with
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype) if np.ndim(b) == 0 else as_tensor(b)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype) if np.ndim(a) == 0 else as_tensor(a)
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b)
    return a, b


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return record(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return record(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record(x ** p, (a,), lambda g: (g * p * x ** (p - 1),), "pow")


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record(np.log(x), (a,), lambda g: (g / x,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split branches keep exp() from overflowing
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.1) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return record(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


# -- reductions and shape manipulation --------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record(np.asarray(out, dtype=a.dtype), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([shape[ax] for ax in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape),)

    return record(np.asarray(out, dtype=a.dtype), (a,), bw, "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if _is_fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return record(np.array(a.data[idx], copy=True), (a,), bw, "getitem")


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=axis)
    return record(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def detach(a) -> Tensor:
    return as_tensor(a).detach()


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul needs [n,k]x[k,m]; got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    def bw(g):
        g = np.ascontiguousarray(g)
        return g @ bd.T, ad.T @ g

    return record(ad @ bd, (a, b), bw, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """Dense affine layer ``x @ weight.T + bias`` with weight shaped [out, in]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input features {x.shape} do not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g = np.ascontiguousarray(g)
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return record(out, parents, bw, "linear")


# -- convolution and spatial ops ------------------------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Output size is ``(H + 2*padding - kh) // stride + 1`` (and the same for W).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be [N,C,H,W], got rank {x.ndim}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d kernel must be [F,C,kh,kw], got rank {weight.ndim}")
    n, c, h, w = x.shape
    f, ck, kh, kw = weight.shape
    if c != ck:
        raise ValueError(f"conv2d channel mismatch: input C={c}, kernel C={ck}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    if h + 2 * padding < kh:
        raise ValueError(f"conv2d kernel height {kh} exceeds padded input height {h + 2 * padding}")
    if w + 2 * padding < kw:
        raise ValueError(f"conv2d kernel width {kw} exceeds padded input width {w + 2 * padding}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (f,):
            raise ValueError(f"conv2d bias must have shape ({f},), got {bias.shape}")

    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    xd, wd = x.data, weight.data
    wmat = wd.reshape(f, -1)
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = xd.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = (cols @ wmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        # broadcast (zero-stride) gradients would push the matmuls off BLAS
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        dw = (gm.T @ cols).reshape(wd.shape) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = gm @ wmat
            if pointwise:
                dx = dcols.reshape(n, h, w, c).transpose(0, 3, 1, 2)
            else:
                dcols = np.ascontiguousarray(dcols.reshape(n, ho, wo, c, kh, kw).transpose(4, 5, 0, 3, 1, 2))
                dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=xd.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[i, j]
                dx = dxp[:, :, padding:padding + h, padding:padding + w]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return record(out, parents, bw, "conv2d")


def max_pool2d(x, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    stride = stride or kernel
    n, c, h, w = x.shape
    if h < kernel or w < kernel:
        raise ValueError(f"max_pool2d kernel {kernel} larger than input {h}x{w}")
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        dx = np.zeros(x.shape, dtype=x.dtype)
        ki, kj = np.divmod(arg, kernel)
        rows = np.arange(ho)[None, None, :, None] * stride + ki
        cols = np.arange(wo)[None, None, None, :] * stride + kj
        nn_ = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(dx, (nn_, cc, rows, cols), g)
        return (dx,)

    return record(np.ascontiguousarray(out), (x,), bw, "max_pool2d")


def avg_pool2d(x, factor: int) -> Tensor:
    """Non-overlapping average pooling (window = stride = factor)."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"avg_pool2d: {h}x{w} not divisible by factor {factor}")
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, factor, axis=2), factor, axis=3) / (factor * factor),)

    return record(out, (x,), bw, "avg_pool2d")


def upsample_nearest(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record(out, (x,), bw, "upsample_nearest")


def batch_norm2d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the batch statistics normalize the input and the running
    buffers are updated in place; in eval mode the running buffers are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ValueError(f"batch_norm2d: input {x.shape} does not match {gamma.shape[0]} channels")
    xd = x.data
    gd = gamma.data[None, :, None, None]
    if training:
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        if m < 2:
            raise ValueError("batch_norm2d in training mode needs more than one value per channel")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.astype(xd.dtype)[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gd
        if training:
            m_ = xd.shape[0] * xd.shape[2] * xd.shape[3]
            dx = (inv[None, :, None, None] / m_) * (
                m_ * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        else:
            dx = dxhat * inv[None, :, None, None]
        return dx, dgamma, dbeta

    return record(out, (x, gamma, beta), bw, "batch_norm2d")


# -- classification losses --------------------------------------------------------

def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return record(out, (x,), bw, "log_softmax")


def softmax(x, axis: int = -1) -> np.ndarray:
    """Plain (non-differentiable) softmax of an array or tensor's data."""
    d = x.data if isinstance(x, Tensor) else np.asarray(x)
    z = np.exp(d - d.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels, axis: int = 1) -> Tensor:
    """Mean cross-entropy; ``labels`` hold class indices, shape = logits minus ``axis``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    k = logits.shape[axis]
    if labels.shape != tuple(np.delete(np.array(logits.shape), axis)):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape} without axis {axis}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integer class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label index out of range for {k} classes")
    logp = log_softmax(logits, axis=axis)
    onehot = (np.expand_dims(labels, axis) == np.arange(k).reshape(
        [-1 if i == axis else 1 for i in range(logits.ndim)])).astype(logits.dtype)
    return neg(sum(mul(logp, onehot))) * (1.0 / max(labels.size, 1))


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits (numerically stable)."""
    logits = as_tensor(logits)
    z = logits.data
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=z.dtype)
    t = np.broadcast_to(t, z.shape)
    out = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def bw(g):
        return (g * (_sigmoid(z) - t),)

    return record(out, (logits,), bw, "bce_with_logits")
