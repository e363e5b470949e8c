"""Minimal reverse-mode autodiff engine and Adam optimizer."""

from . import ops
from .gradcheck import grad_check, numeric_grad
from .optim import Adam, AdamState, MissingGradError, adam_step
from .tensor import (
    GraphConsumedError,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    default_dtype,
    grad_enabled,
    no_grad,
    parameter,
    precision,
)

forward_op = ops.forward_op

__all__ = [
    "Adam", "AdamState", "GraphConsumedError", "MissingGradError",
    "NonFiniteError", "ShapeError", "Tensor", "adam_step", "as_tensor",
    "default_dtype", "forward_op", "grad_check", "grad_enabled", "no_grad",
    "numeric_grad", "ops", "parameter", "precision",
]
