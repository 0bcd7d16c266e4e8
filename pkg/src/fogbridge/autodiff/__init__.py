from . import nn, ops, optim, serialize
from .tensor import (
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    get_default_dtype,
    no_grad,
    set_default_dtype,
    tape,
)

__all__ = [
    "Tensor",
    "as_tensor",
    "backward",
    "default_dtype",
    "get_default_dtype",
    "nn",
    "no_grad",
    "ops",
    "optim",
    "serialize",
    "set_default_dtype",
    "tape",
]
