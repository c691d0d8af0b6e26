"""Gradient-based attribution methods and an exact Shapley oracle.

Every method explains the pre-softmax logit of a target class. Inputs are a
single window [C, L] or a batch [N, C, L]; attributions come back with the
shape of the input.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..autodiff import ShapeError, Tape, Tensor, no_record

BASELINE_KINDS = ("zero", "mean", "median", "random")
METHODS = ("ig", "deeplift", "gradshap", "dlshap")
METHOD_TITLES = {"ig": "IGs", "deeplift": "DeepLIFT", "gradshap": "Gradient SHAP", "dlshap": "DeepLIFT SHAP"}
MAX_SHAPLEY_GROUPS = 12


class Differentiable(Protocol):
    dtype: np.dtype

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor: ...


@dataclass
class Attribution:
    values: np.ndarray  # same shape as the explained input
    method: str
    baseline: str
    target: np.ndarray
    f_x: np.ndarray
    f_baseline: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def delta(self) -> np.ndarray:
        return self.f_x - self.f_baseline

    def completeness_gap(self) -> np.ndarray:
        """|sum of attributions - output delta| per sample."""
        v = self.values if self.values.ndim == 3 else self.values[None]
        return np.abs(v.reshape(len(v), -1).sum(axis=1) - np.atleast_1d(self.delta))


# ---------------------------------------------------------------------------
# baselines

def make_baseline(kind: str, reference: np.ndarray | None = None, shape: tuple | None = None,
                  k: int = 1, seed: int = 0) -> np.ndarray:
    """zero/mean/median give one window [C, L]; random gives k windows [k, C, L]."""
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
    if kind == "zero":
        if shape is None:
            if reference is None:
                raise ValueError("zero baseline needs a shape or reference data")
            shape = reference.shape[1:]
        return np.zeros(shape, dtype=np.float32 if reference is None else reference.dtype)
    if reference is None or len(reference) == 0:
        raise ValueError(f"{kind} baseline needs non-empty reference windows")
    if kind == "mean":
        return reference.mean(axis=0).astype(reference.dtype)
    if kind == "median":
        return np.median(reference, axis=0).astype(reference.dtype)
    idx = np.random.default_rng(seed).integers(0, len(reference), k)
    return reference[idx].copy()


# ---------------------------------------------------------------------------
# helpers

def _batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"expected a window [C, L] or batch [N, C, L], got shape {x.shape}")
    return x, False


def _targets(target, n: int) -> np.ndarray:
    t = np.broadcast_to(np.asarray(target, dtype=np.int64), (n,))
    return np.array(t)


def _match_baseline(baseline, x: np.ndarray) -> np.ndarray:
    b = np.asarray(baseline, dtype=x.dtype)
    if b.shape == x.shape[1:]:
        return np.broadcast_to(b, x.shape)
    if b.shape == x.shape:
        return b
    raise ShapeError(f"baseline shape {b.shape} does not match input {x.shape[1:]}")


def target_logits(model: Differentiable, x: np.ndarray, target, batch_size: int = 512) -> np.ndarray:
    x, _ = _batch(x)
    t = _targets(target, len(x))
    out = np.empty(len(x))
    with no_record():
        for i in range(0, len(x), batch_size):
            z = model.forward(Tensor(np.ascontiguousarray(x[i : i + batch_size], dtype=model.dtype))).data
            out[i : i + batch_size] = z[np.arange(len(z)), t[i : i + batch_size]]
    return out


def input_gradients(model: Differentiable, x: np.ndarray, target, batch_size: int = 256) -> np.ndarray:
    """d logit_target / d input for each row of the batch (rows are independent in eval mode)."""
    x, _ = _batch(x)
    t = _targets(target, len(x))
    grads = np.empty(x.shape, dtype=np.float64)
    for i in range(0, len(x), batch_size):
        inp = Tensor(np.ascontiguousarray(x[i : i + batch_size], dtype=model.dtype), requires_grad=True)
        with Tape() as tape:
            z = model.forward(inp)
        seed = np.zeros_like(z.data)
        seed[np.arange(len(seed)), t[i : i + batch_size]] = 1
        grads[i : i + batch_size] = tape.backward(z, seed)[inp]
    return grads


def _finish(values, squeeze, method, baseline_name, t, fx, fb, **extra) -> Attribution:
    if squeeze:
        values, t, fx, fb = values[0], t[0], fx[0], fb[0]
    return Attribution(values, method, baseline_name, t, fx, fb, extra)


# ---------------------------------------------------------------------------
# methods

def integrated_gradients(model: Differentiable, x, baseline, target, steps: int = 50,
                         batch_size: int = 256, baseline_name: str = "custom") -> Attribution:
    """Midpoint Riemann sum of gradients along the straight path from baseline to x."""
    if steps < 1:
        raise ValueError("integrated gradients needs at least one step")
    xb, squeeze = _batch(x)
    b = _match_baseline(baseline, xb).astype(np.float64)
    xb = xb.astype(np.float64)
    t = _targets(target, len(xb))
    alphas = (np.arange(steps) + 0.5) / steps
    # rows ordered (sample, step) so each chunk is a contiguous slab
    path = b[:, None] + alphas[None, :, None, None] * (xb - b)[:, None]
    grads = input_gradients(model, path.reshape(-1, *xb.shape[1:]), np.repeat(t, steps), batch_size)
    avg = grads.reshape(len(xb), steps, *xb.shape[1:]).mean(axis=1)
    values = (xb - b) * avg
    fx, fb = target_logits(model, xb, t), target_logits(model, b, t)
    return _finish(values, squeeze, "ig", baseline_name, t, fx, fb, steps=steps)


def deeplift(model: Differentiable, x, baseline, target, baseline_name: str = "custom",
             batch_size: int = 256) -> Attribution:
    """Rescale-rule multipliers from one paired pass over [x; baseline]."""
    xb, squeeze = _batch(x)
    b = _match_baseline(baseline, xb)
    t = _targets(target, len(xb))
    values = np.empty(xb.shape, dtype=np.float64)
    fx = np.empty(len(xb))
    fb = np.empty(len(xb))
    for i in range(0, len(xb), batch_size):
        xs, bs = xb[i : i + batch_size], b[i : i + batch_size]
        n = len(xs)
        inp = Tensor(np.concatenate([xs, bs]).astype(model.dtype), requires_grad=True)
        with Tape(rule="rescale", pair_size=n, sources=[inp]) as tape:
            z = model.forward(inp)
        seed = np.zeros_like(z.data)
        seed[np.arange(n), t[i : i + n]] = 1
        mult = tape.backward(z, seed)[inp][:n]
        values[i : i + n] = (xs.astype(np.float64) - bs) * mult
        fx[i : i + n] = z.data[np.arange(n), t[i : i + n]]
        fb[i : i + n] = z.data[n + np.arange(n), t[i : i + n]]
    return _finish(values, squeeze, "deeplift", baseline_name, t, fx, fb)


def _baseline_set(baselines, window: np.ndarray) -> np.ndarray:
    bs = np.asarray(baselines)
    if bs.ndim == window.ndim:
        bs = bs[None]
    if bs.size == 0 or len(bs) == 0:
        raise ValueError("the baseline set is empty")
    if bs.shape[1:] != window.shape:
        raise ShapeError(f"baseline windows {bs.shape[1:]} do not match input {window.shape}")
    return bs


def gradient_shap(model: Differentiable, x, baselines, target, n_samples: int = 20,
                  noise: float = 0.0, seed: int = 0, batch_size: int = 256,
                  baseline_name: str = "custom") -> Attribution:
    """Expected gradients: mean of (x - b) * grad f at b + alpha (x - b) + eta.

    Sample i uses its own generator seeded with ``seed + i``.
    """
    if n_samples < 1:
        raise ValueError("gradient SHAP needs at least one sample")
    xb, squeeze = _batch(x)
    bs = _baseline_set(baselines, xb[0]).astype(np.float64)
    xb = xb.astype(np.float64)
    t = _targets(target, len(xb))
    picks, alphas, points = [], [], []
    for i, xi in enumerate(xb):
        rng = np.random.default_rng(seed + i)
        j = rng.integers(0, len(bs), n_samples)
        a = rng.random(n_samples)
        eta = rng.normal(0, noise, (n_samples, *xi.shape)) if noise > 0 else 0.0
        points.append(bs[j] + a[:, None, None] * (xi - bs[j]) + eta)
        picks.append(j)
        alphas.append(a)
    pts = np.concatenate(points)
    grads = input_gradients(model, pts, np.repeat(t, n_samples), batch_size)
    grads = grads.reshape(len(xb), n_samples, *xb.shape[1:])
    disp = xb[:, None] - bs[np.stack(picks)]
    values = (disp * grads).mean(axis=1)
    fx = target_logits(model, xb, t)
    fb = np.array([target_logits(model, bs, ti).mean() for ti in t])
    return _finish(values, squeeze, "gradshap", baseline_name, t, fx, fb, n_samples=n_samples, noise=noise)


def deeplift_shap(model: Differentiable, x, baselines, target, baseline_name: str = "custom",
                  batch_size: int = 256) -> Attribution:
    """Mean of single-reference DeepLIFT over each of the k baselines."""
    xb, squeeze = _batch(x)
    bs = _baseline_set(baselines, xb[0])
    t = _targets(target, len(xb))
    runs = [deeplift(model, xb, b, t, batch_size=batch_size) for b in bs]
    values = np.mean([r.values for r in runs], axis=0)
    fb = np.mean([r.f_baseline for r in runs], axis=0)
    return _finish(values, squeeze, "dlshap", baseline_name, t, runs[0].f_x, fb, k=len(bs))


def explain(method: str, model: Differentiable, x, baselines: np.ndarray, target,
            steps: int = 50, n_samples: int = 20, noise: float = 0.0, seed: int = 0,
            baseline_name: str = "custom", batch_size: int = 256) -> Attribution:
    """Dispatch by method id. Single-reference methods use the mean of ``baselines``
    when several are given."""
    bs = np.asarray(baselines)
    xb, _ = _batch(x)
    single = bs if bs.ndim == xb.ndim - 1 else bs.mean(axis=0)
    if method == "ig":
        return integrated_gradients(model, x, single, target, steps, batch_size, baseline_name)
    if method == "deeplift":
        return deeplift(model, x, single, target, baseline_name, batch_size)
    if method == "gradshap":
        return gradient_shap(model, x, bs, target, n_samples, noise, seed, batch_size, baseline_name)
    if method == "dlshap":
        return deeplift_shap(model, x, bs, target, baseline_name, batch_size)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# ---------------------------------------------------------------------------
# exact Shapley oracle

def mask_channels(x: np.ndarray, baseline: np.ndarray, channels: Sequence[int]) -> np.ndarray:
    """Copy of x with the listed channels' whole series taken from ``baseline``."""
    out = np.array(x, copy=True)
    ch = list(channels)
    if ch:
        out[..., ch, :] = np.asarray(baseline)[..., ch, :]
    return out


def shapley_exact_oracle(model: Differentiable, x: np.ndarray, baseline: np.ndarray, target: int,
                         groups: Sequence[Sequence[int]] | None = None) -> np.ndarray:
    """Exact Shapley value per channel group by enumerating all 2^G coalitions.

    A coalition keeps its groups' channels from x and takes every other channel
    from the baseline.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError("the Shapley oracle explains one window [C, L]")
    baseline = _match_baseline(baseline, x[None])[0]
    if groups is None:
        groups = [[c] for c in range(x.shape[0])]
    g = len(groups)
    if g > MAX_SHAPLEY_GROUPS:
        raise ValueError(f"{g} groups exceed the exact-enumeration limit of {MAX_SHAPLEY_GROUPS}")
    if g == 0:
        return np.zeros(0)
    all_ch = [c for grp in groups for c in grp]
    inputs = np.empty((2**g, *x.shape), dtype=x.dtype)
    for mask in range(2**g):
        present = [c for j, grp in enumerate(groups) if mask >> j & 1 for c in grp]
        absent = [c for c in all_ch if c not in set(present)]
        inputs[mask] = mask_channels(x, baseline, absent)
    f = target_logits(model, inputs, target).astype(np.float64)
    phi = np.zeros(g)
    fact = [math.factorial(i) for i in range(g + 1)]
    for j in range(g):
        bit = 1 << j
        for mask in range(2**g):
            if mask & bit:
                continue
            s = bin(mask).count("1")
            phi[j] += fact[s] * fact[g - s - 1] / fact[g] * (f[mask | bit] - f[mask])
    return phi


def group_sums(values: np.ndarray, groups: Sequence[Sequence[int]]) -> np.ndarray:
    return np.array([values[..., list(grp), :].sum(axis=(-1, -2)) for grp in groups]).T


def coalitions(n: int):
    """All subsets of range(n), smallest first (exposed for tests)."""
    for r in range(n + 1):
        yield from itertools.combinations(range(n), r)
