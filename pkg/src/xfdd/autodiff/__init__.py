"""Reverse-mode automatic differentiation over numpy arrays."""

from . import ops
from .gradcheck import GradientCheckError, grad_check, numeric_grad, relative_error
from .tensor import (
    Gradients,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    default_dtype,
    no_record,
    precision,
)

__all__ = [
    "Gradients",
    "GradientCheckError",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "backward",
    "default_dtype",
    "grad_check",
    "no_record",
    "numeric_grad",
    "ops",
    "precision",
    "relative_error",
]
