"""Dense tensors and the operation tape used for reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

_ids = itertools.count()
_local = threading.local()

_DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class TapeError(RuntimeError):
    pass


def default_dtype() -> np.dtype:
    return getattr(_local, "dtype", _DEFAULT_DTYPE)


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for newly created tensors.

    >>> with precision(np.float64):
    ...     Tensor([1.0]).dtype
    dtype('float64')
    """
    prev = getattr(_local, "dtype", _DEFAULT_DTYPE)
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = prev


class Tensor:
    """An n-dimensional array that can take part in recorded computations.

    ``requires_grad`` marks leaves (parameters, inputs) whose gradients are
    wanted; any op applied to such a tensor while a :class:`Tape` is active is
    recorded and its output requires grad as well.
    """

    __slots__ = ("data", "requires_grad", "id", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else default_dtype()
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Operator sugar; the implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


# Backward closures receive the upstream gradient and a context object and
# return one gradient (or None) per input.
BackwardFn = Callable[[np.ndarray, "BackwardContext"], Sequence[np.ndarray | None]]


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class BackwardContext:
    """What an op's backward closure may consult besides its captured values.

    ``rule`` is ``"gradient"`` for ordinary differentiation or ``"rescale"``
    for DeepLIFT-style propagation over a batch whose first ``pair_size`` rows
    are inputs and whose last ``pair_size`` rows are the matching references.
    """

    rule: str = "gradient"
    pair_size: int = 0
    varying: set = field(default_factory=set)

    @property
    def rescale(self) -> bool:
        return self.rule == "rescale"

    def is_varying(self, t: Tensor) -> bool:
        return t.id in self.varying


class Tape:
    """Ordered record of primitive operations, rebuilt on every forward pass.

    Use as a context manager; ops executed inside the ``with`` block whose
    inputs require grad are appended to the innermost active tape.

    ``rule="rescale"`` switches nonlinear ops to difference-quotient
    multipliers; ``sources`` are the tensors whose paired rows differ between
    input and reference.
    """

    def __init__(self, rule: str = "gradient", pair_size: int = 0,
                 sources: Iterable[Tensor] = ()):
        if rule not in ("gradient", "rescale"):
            raise ValueError(f"unknown rule {rule!r}")
        if rule == "rescale" and pair_size < 1:
            raise ValueError("rescale rule needs pair_size >= 1")
        self.nodes: list[Node] = []
        self.ctx = BackwardContext(rule, pair_size, {t.id for t in sources})
        self._produced: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape stack corrupted")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
               backward: BackwardFn) -> None:
        self._produced[output.id] = len(self.nodes)
        self.nodes.append(Node(op, inputs, output, backward))
        if self.ctx.rule == "rescale" and any(t.id in self.ctx.varying for t in inputs):
            self.ctx.varying.add(output.id)

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> "Gradients":
        """Propagate from ``output`` back through the tape.

        ``output`` must be a scalar unless an explicit ``seed`` gradient of the
        same shape is supplied (used by attribution routines).
        """
        if seed is None:
            if output.size != 1:
                raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
            seed = np.ones_like(output.data)
        elif seed.shape != output.shape:
            raise ShapeError(f"seed shape {seed.shape} != output shape {output.shape}")
        if output.id not in self._produced and not output.requires_grad:
            raise TapeError("output was not produced on this tape")
        self._check_order()

        grads: dict[int, np.ndarray] = {output.id: np.asarray(seed, dtype=output.dtype)}
        # ids whose buffer was allocated here and may be updated in place
        owned: set[int] = set()
        for node in reversed(self.nodes):
            g = grads.get(node.output.id)
            if g is None:
                continue
            in_grads = node.backward(g, self.ctx)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                prev = grads.get(t.id)
                if isinstance(gi, SliceGrad):
                    if prev is None:
                        prev = np.zeros_like(t.data)
                    elif t.id not in owned:
                        prev = prev.copy()
                    prev[gi.index] += gi.value
                    grads[t.id] = prev
                    owned.add(t.id)
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
                if prev is None:
                    grads[t.id] = gi
                else:
                    grads[t.id] = prev + gi
                    owned.add(t.id)
        return Gradients(grads)

    def _check_order(self) -> None:
        for pos, node in enumerate(self.nodes):
            for t in node.inputs:
                at = self._produced.get(t.id)
                if at is not None and at >= pos:
                    raise TapeError(f"cycle: op {pos} ({node.op}) consumes a later output")


@dataclass
class SliceGrad:
    """Gradient that is nonzero only at ``index``; accumulated in place."""

    index: object
    value: np.ndarray


class Gradients:
    """Mapping from tensor to gradient; tensors outside the ancestry map to zeros."""

    def __init__(self, by_id: dict[int, np.ndarray]):
        self._by_id = by_id

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._by_id.get(t.id)
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return t.id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)


def backward(tape: Tape, output: Tensor) -> Gradients:
    return tape.backward(output)


def _stack() -> list[Tape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    """Run ops without recording them on any tape (e.g. evaluation)."""
    stack = _stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)
