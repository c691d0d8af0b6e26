"""Differentiable primitives.

Each op computes its forward value with numpy and, when a tape is active and
some input requires grad, records a backward closure. Nonlinear elementwise
ops, products and max-pooling also know the DeepLIFT Rescale rule, which the
tape selects through ``BackwardContext.rule``.
"""

from __future__ import annotations

from numbers import Number
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import BackwardContext, ShapeError, SliceGrad, Tensor, active_tape

RESCALE_EPS = 1e-7


def _wrap(out: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward) -> Tensor:
    t = Tensor(out, dtype=out.dtype)
    tape = active_tape()
    if tape is not None and any(x.requires_grad for x in inputs):
        t.requires_grad = True
        tape.record(op, inputs, t, backward)
    return t


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _is_scalar(t: Tensor) -> bool:
    return t.ndim == 0 or t.size == 1 and t.ndim == 1


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible "
                         "(only equal shapes or scalar operands are supported)")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(t.shape)


def _pair_mean(v: np.ndarray, n: int) -> np.ndarray:
    half = 0.5 * (v[:n] + v[n:])
    return np.concatenate([half, half], axis=0)


def _paired(ctx: BackwardContext, t: Tensor) -> bool:
    return ctx.rescale and ctx.is_varying(t) and t.ndim > 0 and t.shape[0] == 2 * ctx.pair_size


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_elementwise("add", a, b)

    def backward(g, ctx):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _wrap(a.data + b.data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_elementwise("sub", a, b)

    def backward(g, ctx):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _wrap(a.data - b.data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product.

    Under the Rescale rule a product of two input-dependent factors splits its
    difference symmetrically, ``d(ab) = mean(b) da + mean(a) db`` where the
    means are taken over input and reference, which sums to the exact delta.
    """
    a, b = _coerce(a, b)
    _check_elementwise("mul", a, b)

    def backward(g, ctx):
        av, bv = a.data, b.data
        if ctx.rescale and a.shape == b.shape:
            n = ctx.pair_size
            if _paired(ctx, a) and _paired(ctx, b):
                av, bv = _pair_mean(av, n), _pair_mean(bv, n)
        return _reduce_to(g * bv, a), _reduce_to(g * av, b)

    return _wrap(a.data * b.data, "mul", (a, b), backward)


def scale(x: Tensor, c: Number) -> Tensor:
    c = x.dtype.type(c)

    def backward(g, ctx):
        return (g * c,)

    return _wrap(x.data * c, "scale", (x,), backward)


def _unary(op: str, x: Tensor, y: np.ndarray, dy: np.ndarray) -> Tensor:
    """Record an elementwise op with forward value ``y`` and local slope ``dy``."""

    def backward(g, ctx):
        if _paired(ctx, x):
            n = ctx.pair_size
            dx = x.data[:n] - x.data[n:]
            dout = y[:n] - y[n:]
            local = dy[:n]
            big = np.abs(dx) > RESCALE_EPS
            m = np.where(big, dout / np.where(big, dx, 1), local)
            return (g * np.concatenate([m, m], axis=0),)
        return (g * dy,)

    return _wrap(y, op, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _unary("sigmoid", x, y, y * (1.0 - y))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _unary("tanh", x, y, 1.0 - y * y)


def relu(x: Tensor) -> Tensor:
    # slope at exactly 0 is 0
    pos = x.data > 0
    return _unary("relu", x, np.where(pos, x.data, 0).astype(x.dtype), pos.astype(x.dtype))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return _unary("abs", x, np.abs(x.data), np.sign(x.data))


def square(x: Tensor) -> Tensor:
    return _unary("square", x, x.data * x.data, 2 * x.data)


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")

    def backward(g, ctx):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _wrap(a.data @ b.data, "matmul", (a, b), backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a vector along the last axis of ``x``."""
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match last axis of {x.shape}")

    def backward(g, ctx):
        return g, g.reshape(-1, bias.shape[0]).sum(axis=0)

    return _wrap(x.data + bias.data, "add_bias", (x, bias), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` laid out as [out, in]."""
    out = matmul(x, transpose(weight))
    return add_bias(out, bias) if bias is not None else out


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {x.shape}")

    def backward(g, ctx):
        return (g.T,)

    return _wrap(np.ascontiguousarray(x.data.T), "transpose", (x,), backward)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g, ctx):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _wrap(np.ascontiguousarray(x.data.transpose(axes)), "permute", (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def backward(g, ctx):
        return (g.reshape(x.shape),)

    return _wrap(x.data.reshape(shape), "reshape", (x,), backward)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


def getitem(x: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def backward(g, ctx):
        if basic:
            return (SliceGrad(index, g),)
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _wrap(np.ascontiguousarray(x.data[index]), "getitem", (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g, ctx):
        out = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            out.append(np.ascontiguousarray(g[tuple(sl)]))
        return out

    return _wrap(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)

    def backward(g, ctx):
        return [np.ascontiguousarray(np.take(g, i, axis=axis)) for i in range(len(tensors))]

    return _wrap(np.stack([t.data for t in tensors], axis=axis), "stack", tensors, backward)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    def backward(g, ctx):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).astype(x.dtype),)

    return _wrap(np.asarray(x.data.sum(axis=axis), dtype=x.dtype), "sum", (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis), 1.0 / float(count))


# ---------------------------------------------------------------------------
# network primitives

def log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = np.exp(z - z.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Mean over the batch of ``-w[y] * log softmax(logits)[y]``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    n = logits.shape[0]
    w = np.ones(n, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    logp = log_softmax_np(logits.data)
    rows = np.arange(n)
    loss = -(w * logp[rows, labels]).sum() / n

    def backward(g, ctx):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (w[:, None] * (g / n)),)

    return _wrap(np.asarray(loss, dtype=logits.dtype), "cross_entropy", (logits,), backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """Batched 1-D cross-correlation. ``x`` is [N, C_in, L], ``weight`` [C_out, C_in, k]."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects x [N, C, L] and weight [O, C, k], got {x.shape}, {weight.shape}")
    n, c, length = x.shape
    o, cw, k = weight.shape
    if c != cw:
        raise ShapeError(f"conv1d: input has {c} channels but weight expects {cw}")
    if length + 2 * padding < k:
        raise ShapeError(f"conv1d: length {length} with padding {padding} is shorter than kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    lp = xp.shape[2]
    l_out = (lp - k) // stride + 1
    cols = sliding_window_view(xp, k, axis=2)[:, :, : (l_out - 1) * stride + 1 : stride, :]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(n * l_out, c * k)
    wm = weight.data.reshape(o, c * k)
    out = (cols @ wm.T).reshape(n, l_out, o).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def backward(g, ctx):
        gt = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * l_out, o)
        gw = (gt.T @ cols).reshape(o, c, k) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gt @ wm).reshape(n, l_out, c, k)
            dxp = np.zeros_like(xp)
            span = (l_out - 1) * stride + 1
            for j in range(k):
                dxp[:, :, j : j + span : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            gx = dxp[:, :, padding : lp - padding] if padding else dxp
            gx = np.ascontiguousarray(gx)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _wrap(out, "conv1d", inputs, backward)


def maxpool1d(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Sliding max over the last axis of [N, C, L]; ties resolve to the first position."""
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d expects [N, C, L], got {x.shape}")
    length = x.shape[2]
    if kernel > length:
        raise ShapeError(f"maxpool1d: window {kernel} exceeds length {length}")
    l_out = (length - kernel) // stride + 1
    win = sliding_window_view(x.data, kernel, axis=2)[:, :, : (l_out - 1) * stride + 1 : stride, :]
    idx = win.argmax(axis=-1)
    out = np.ascontiguousarray(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0])
    span = (l_out - 1) * stride + 1

    def scatter(vals, route):
        gx = np.zeros_like(x.data)
        for j in range(kernel):
            gx[:, :, j : j + span : stride] += np.where(route == j, vals, 0)
        return gx

    def backward(g, ctx):
        if _paired(ctx, x):
            n = ctx.pair_size
            diff = win[:n] - win[n:]
            route = idx[:n]
            din = np.take_along_axis(diff, route[..., None], axis=-1)[..., 0]
            # a flat x-argmax cannot carry the delta; use the window's largest change
            # instead (|dout| <= max |din|, so the delta is then recoverable)
            flat = np.abs(din) <= RESCALE_EPS
            if flat.any():
                route = np.where(flat, np.abs(diff).argmax(axis=-1), route)
                din = np.take_along_axis(diff, route[..., None], axis=-1)[..., 0]
            dout = out[:n] - out[n:]
            big = np.abs(din) > RESCALE_EPS
            m = np.where(big, dout / np.where(big, din, 1), 1).astype(x.dtype)
            return (scatter(g * np.concatenate([m, m]), np.concatenate([route, route])),)
        return (scatter(g, idx),)

    return _wrap(out, "maxpool1d", (x,), backward)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, train: bool, eps: float = 1e-5,
                momentum: float = 0.1) -> Tensor:
    """Per-channel normalization over batch and length of [N, C, L].

    In train mode batch statistics are used and the running buffers are
    updated in place; eval mode is the affine map given the running buffers.
    """
    if x.ndim != 3 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm1d: input {x.shape} vs {gamma.shape[0]} channels")
    n, c, length = x.shape
    m = n * length
    g_ = gamma.data[None, :, None]
    if train:
        if m < 2:
            raise ShapeError("batchnorm1d in train mode needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu[None, :, None]) * inv_std[None, :, None]
    out = (g_ * xhat + beta.data[None, :, None]).astype(x.dtype)

    def backward(g, ctx):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        dxhat = g * g_
        if train:
            dx = (inv_std[None, :, None] / m) * (
                m * dxhat
                - dxhat.sum(axis=(0, 2), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
            )
        else:
            dx = dxhat * inv_std[None, :, None]
        return dx.astype(x.dtype), dgamma, dbeta

    return _wrap(out, "batchnorm1d", (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    mask = ((rng.random(x.shape) >= rate) / (1.0 - rate)).astype(x.dtype)

    def backward(g, ctx):
        return (g * mask,)

    return _wrap(x.data * mask, "dropout", (x,), backward)
