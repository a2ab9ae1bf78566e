"""Minimal reverse-mode differentiation engine over NumPy arrays."""

from . import kernels, ops
from .gradcheck import grad_check
from .ops import (
    activation,
    add,
    add_n,
    affine,
    concat,
    conv2d,
    pool2d,
    softmax,
    softmax_vec,
)
from .optim import Adam, clip_grad_norm
from .tensor import (
    ConfigurationError,
    DiffcoreError,
    Graph,
    NonFiniteError,
    Parameter,
    Tensor,
    UsageError,
    backward,
    default_dtype,
    no_grad,
    precision,
    set_default_dtype,
)

__all__ = [
    "Adam", "ConfigurationError", "DiffcoreError", "Graph", "NonFiniteError", "Parameter",
    "Tensor", "UsageError", "activation", "add", "add_n", "affine", "backward", "clip_grad_norm",
    "concat", "conv2d", "default_dtype", "grad_check", "kernels", "no_grad", "ops", "pool2d",
    "precision", "set_default_dtype", "softmax", "softmax_vec",
]
