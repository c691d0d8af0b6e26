from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


class GradientCheckError(ArithmeticError):
    def __init__(self, coordinate: int, analytic: float, numeric: float):
        super().__init__(f"non-finite gradient at coordinate {coordinate}: "
                         f"analytic={analytic}, numeric={numeric}")
        self.coordinate = coordinate


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def analytic_grad(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    was = x.requires_grad
    x.requires_grad = True
    try:
        with Tape() as tape:
            out = f(x)
        return np.array(tape.backward(out)[x], dtype=np.float64)
    finally:
        x.requires_grad = was


def numeric_grad(f: Callable[[Tensor], Tensor], x: Tensor, eps: float,
                 coords: np.ndarray) -> np.ndarray:
    """Central differences of ``f`` at the flat coordinates ``coords`` of ``x``.

    ``x.data`` is perturbed in place and restored afterwards, so ``f`` may
    close over objects that hold ``x`` (e.g. a model parameter).
    """
    flat = x.data.reshape(-1)
    out = np.empty(len(coords))
    for i, j in enumerate(coords):
        orig = flat[j]
        flat[j] = orig + eps
        hi = f(x).data.item()
        flat[j] = orig - eps
        lo = f(x).data.item()
        flat[j] = orig
        out[i] = (hi - lo) / (2 * eps)
    return out


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4,
               coords=None) -> float:
    """Maximum relative error between tape gradients and central differences.

    The error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``. ``coords``
    restricts the check to a subset of flat indices.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    coords = np.arange(x.size) if coords is None else np.asarray(coords)
    analytic = analytic_grad(f, x).reshape(-1)[coords]
    numeric = numeric_grad(f, x, eps, coords)
    for j, a, n in zip(coords, analytic, numeric):
        if not (np.isfinite(a) and np.isfinite(n)):
            raise GradientCheckError(int(j), float(a), float(n))
    if len(coords) == 0:
        return 0.0
    return float(relative_error(analytic, numeric).max())
