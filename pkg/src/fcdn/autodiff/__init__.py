"""Small reverse-mode autodiff engine on NumPy arrays."""

from . import functional
from .gradcheck import grad_check
from .optim import AdamState, adam_step
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    get_default_dtype,
    grad_enabled,
    matmul,
    no_grad,
    reshape,
    set_default_dtype,
    stack,
    transpose,
)

__all__ = [
    "AdamState",
    "Tensor",
    "adam_step",
    "as_tensor",
    "concat",
    "default_dtype",
    "functional",
    "get_default_dtype",
    "grad_check",
    "grad_enabled",
    "matmul",
    "no_grad",
    "reshape",
    "set_default_dtype",
    "stack",
    "transpose",
]
