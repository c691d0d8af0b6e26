"""Layer library: the building blocks of the FTCM/FLM stacks and the baselines.

All layers consume batched tensors. Sequence layers take channels-first input
``[N, D, L]`` (features by time), the layout the convolutional front end
produces, and emit the top layer's final hidden state ``[N, H]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import ShapeError, Tensor
from ..autodiff import ops


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Layer:
    kind = "layer"
    recurrent = False

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def config(self) -> dict:
        return {}

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def table_shape(self, in_shape: tuple):
        """Output shape as listed in a layer-wise summary (batch axis as -1)."""
        return [-1, *self.out_shape(in_shape)]

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, x: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, train=False, rng=None):
        return self.forward(x, train, rng)


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        if stride < 1 or padding < 0:
            raise ValueError("stride must be positive and padding non-negative")
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        fan_in = in_channels * kernel_size
        self.params["weight"] = _uniform(rng, (out_channels, in_channels, kernel_size), fan_in, dtype)
        self.params["bias"] = _zeros((out_channels,), dtype)

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "stride": self.stride, "padding": self.padding}

    def out_shape(self, in_shape):
        c, length = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv1d expects {self.in_channels} channels, got {c}")
        if length + 2 * self.padding < self.kernel_size:
            raise ShapeError(f"conv1d: length {length} shorter than kernel {self.kernel_size}")
        return (self.out_channels, (length + 2 * self.padding - self.kernel_size) // self.stride + 1)

    def forward(self, x, train=False, rng=None):
        return ops.conv1d(x, self.params["weight"], self.params["bias"], self.stride, self.padding)


class BatchNorm1d(Layer):
    kind = "batchnorm1d"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.params["beta"] = _zeros((channels,), dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def config(self):
        return {"channels": self.channels, "eps": self.eps, "momentum": self.momentum}

    def out_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeError(f"batchnorm1d expects {self.channels} channels, got {in_shape[0]}")
        return in_shape

    def forward(self, x, train=False, rng=None):
        return ops.batchnorm1d(x, self.params["gamma"], self.params["beta"],
                               self.buffers["running_mean"], self.buffers["running_var"],
                               train, self.eps, self.momentum)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        return ops.relu(x)


class MaxPool1d(Layer):
    kind = "maxpool1d"

    def __init__(self, kernel_size: int = 2, stride: int = 1):
        super().__init__()
        self.kernel_size, self.stride = kernel_size, stride

    def config(self):
        return {"kernel_size": self.kernel_size, "stride": self.stride}

    def out_shape(self, in_shape):
        c, length = in_shape
        if self.kernel_size > length:
            raise ShapeError(f"maxpool1d: window {self.kernel_size} exceeds length {length}")
        return (c, (length - self.kernel_size) // self.stride + 1)

    def forward(self, x, train=False, rng=None):
        return ops.maxpool1d(x, self.kernel_size, self.stride)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float = 0.3):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, train=False, rng=None):
        return ops.dropout(x, self.rate, train, rng)


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        return ops.reshape(x, (x.shape[0], -1))


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = _uniform(rng, (out_features, in_features), in_features, dtype)
        self.params["bias"] = _zeros((out_features,), dtype)

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def out_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"linear expects ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x, train=False, rng=None):
        return ops.linear(x, self.params["weight"], self.params["bias"])


# ---------------------------------------------------------------------------
# recurrent layers

@dataclass
class GruParams:
    """Per-layer gate matrices: ``U`` act on the input, ``W`` on the hidden state."""

    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.U_z.shape[1]


def gru_layer(x_seq: Tensor, p: GruParams, h0: Tensor) -> tuple[list[Tensor], Tensor]:
    """Run one GRU layer over ``x_seq`` [N, L, D]; returns per-step states and the last one.

        z_t = sigmoid(W_z h + U_z x_t + b_z)
        r_t = sigmoid(W_r h + U_r x_t + b_r)
        c_t = tanh(W_h (r_t * h) + U_h x_t + b_h)
        h_t = (1 - z_t) * h + z_t * c_t
    """
    n, length, d = x_seq.shape
    hs = p.hidden_size
    if d != p.input_size:
        raise ShapeError(f"gru: input has {d} features but U matrices expect {p.input_size}")
    u = ops.concat([p.U_z, p.U_r, p.U_h], axis=0)
    b = ops.concat([p.b_z, p.b_r, p.b_h], axis=0)
    w_zr = ops.transpose(ops.concat([p.W_z, p.W_r], axis=0))
    w_h = ops.transpose(p.W_h)
    xproj = ops.linear(ops.reshape(x_seq, (n * length, d)), u, b)
    xproj = ops.reshape(xproj, (n, length, 3 * hs))
    h = h0
    states = []
    for t in range(length):
        xz_r = xproj[:, t, : 2 * hs]
        xh = xproj[:, t, 2 * hs :]
        gates = ops.sigmoid(ops.add(xz_r, ops.matmul(h, w_zr)))
        z = gates[:, :hs]
        r = gates[:, hs:]
        cand = ops.tanh(ops.add(ops.matmul(ops.mul(r, h), w_h), xh))
        h = ops.add(ops.mul(ops.sub(1.0, z), h), ops.mul(z, cand))
        states.append(h)
    return states, h


def rnn_layer(x_seq: Tensor, U: Tensor, W: Tensor, b: Tensor, h0: Tensor):
    """Elman cell: h_t = tanh(W h_{t-1} + U x_t + b)."""
    n, length, d = x_seq.shape
    xproj = ops.reshape(ops.linear(ops.reshape(x_seq, (n * length, d)), U, b), (n, length, -1))
    w = ops.transpose(W)
    h = h0
    states = []
    for t in range(length):
        h = ops.tanh(ops.add(xproj[:, t, :], ops.matmul(h, w)))
        states.append(h)
    return states, h


def lstm_layer(x_seq: Tensor, U: Tensor, W: Tensor, b: Tensor, h0: Tensor, c0: Tensor):
    """Standard LSTM with gate order (input, forget, cell, output) and one bias per gate."""
    n, length, d = x_seq.shape
    hs = W.shape[1]
    xproj = ops.reshape(ops.linear(ops.reshape(x_seq, (n * length, d)), U, b), (n, length, 4 * hs))
    w = ops.transpose(W)
    h, c = h0, c0
    states = []
    for t in range(length):
        pre = ops.add(xproj[:, t, :], ops.matmul(h, w))
        ifo = ops.sigmoid(pre[:, : 2 * hs])
        i, f = ifo[:, :hs], ifo[:, hs:]
        g = ops.tanh(pre[:, 2 * hs : 3 * hs])
        o = ops.sigmoid(pre[:, 3 * hs :])
        c = ops.add(ops.mul(f, c), ops.mul(i, g))
        h = ops.mul(o, ops.tanh(c))
        states.append(h)
    return states, (h, c)


class _Recurrent(Layer):
    recurrent = True

    def __init__(self, input_size: int, hidden_size: int, num_layers: int):
        super().__init__()
        if num_layers < 1 or hidden_size < 1:
            raise ValueError("num_layers and hidden_size must be positive")
        self.input_size, self.hidden_size, self.num_layers = input_size, hidden_size, num_layers

    def config(self):
        return {"input_size": self.input_size, "hidden_size": self.hidden_size,
                "num_layers": self.num_layers}

    def out_shape(self, in_shape):
        d, _ = in_shape
        if d != self.input_size:
            raise ShapeError(f"{self.kind} expects {self.input_size} input features, got {d}")
        return (self.hidden_size,)

    def table_shape(self, in_shape):
        self.out_shape(in_shape)
        return [[[-1, in_shape[1], self.hidden_size], [-1, self.num_layers, self.hidden_size]]]

    def _zeros_state(self, n, dtype):
        return Tensor(np.zeros((n, self.hidden_size), dtype=dtype))

    def run(self, x: Tensor, h0: Tensor | None = None):
        """Full output: (top-layer states [N, L, H], final states [N, layers, H])."""
        raise NotImplementedError

    def forward(self, x, train=False, rng=None):
        _, final = self.run(x)
        return final[:, self.num_layers - 1, :]


class GRU(_Recurrent):
    kind = "gru"

    def __init__(self, input_size: int, hidden_size: int, num_layers: int = 1, rng=None, dtype=np.float32):
        super().__init__(input_size, hidden_size, num_layers)
        rng = rng or np.random.default_rng(0)
        for layer in range(num_layers):
            d = input_size if layer == 0 else hidden_size
            for g in "zrh":
                self.params[f"U_{g}{layer}"] = _uniform(rng, (hidden_size, d), d, dtype)
            for g in "zrh":
                self.params[f"W_{g}{layer}"] = _uniform(rng, (hidden_size, hidden_size), hidden_size, dtype)
            for g in "zrh":
                self.params[f"b_{g}{layer}"] = _zeros((hidden_size,), dtype)

    def layer_params(self, layer: int) -> GruParams:
        p = self.params
        return GruParams(*(p[f"{k}_{g}{layer}"] for k in "UW" for g in "zrh"),
                         *(p[f"b_{g}{layer}"] for g in "zrh"))

    def run(self, x, h0=None):
        seq = ops.permute(x, (0, 2, 1))
        n = x.shape[0]
        finals = []
        states = None
        for layer in range(self.num_layers):
            init = self._zeros_state(n, x.dtype) if h0 is None else h0[:, layer, :]
            states, h = gru_layer(seq, self.layer_params(layer), init)
            finals.append(h)
            seq = ops.stack(states, axis=1)
        return seq, ops.stack(finals, axis=1)


class RNN(_Recurrent):
    kind = "rnn"

    def __init__(self, input_size: int, hidden_size: int, num_layers: int = 1, rng=None, dtype=np.float32):
        super().__init__(input_size, hidden_size, num_layers)
        rng = rng or np.random.default_rng(0)
        for layer in range(num_layers):
            d = input_size if layer == 0 else hidden_size
            self.params[f"U{layer}"] = _uniform(rng, (hidden_size, d), d, dtype)
            self.params[f"W{layer}"] = _uniform(rng, (hidden_size, hidden_size), hidden_size, dtype)
            self.params[f"b{layer}"] = _zeros((hidden_size,), dtype)

    def run(self, x, h0=None):
        seq = ops.permute(x, (0, 2, 1))
        n = x.shape[0]
        finals = []
        for layer in range(self.num_layers):
            p = self.params
            init = self._zeros_state(n, x.dtype) if h0 is None else h0[:, layer, :]
            states, h = rnn_layer(seq, p[f"U{layer}"], p[f"W{layer}"], p[f"b{layer}"], init)
            finals.append(h)
            seq = ops.stack(states, axis=1)
        return seq, ops.stack(finals, axis=1)


class LSTM(_Recurrent):
    kind = "lstm"

    def __init__(self, input_size: int, hidden_size: int, num_layers: int = 1, rng=None, dtype=np.float32):
        super().__init__(input_size, hidden_size, num_layers)
        rng = rng or np.random.default_rng(0)
        for layer in range(num_layers):
            d = input_size if layer == 0 else hidden_size
            self.params[f"U{layer}"] = _uniform(rng, (4 * hidden_size, d), d, dtype)
            self.params[f"W{layer}"] = _uniform(rng, (4 * hidden_size, hidden_size), hidden_size, dtype)
            self.params[f"b{layer}"] = _zeros((4 * hidden_size,), dtype)

    def run(self, x, h0=None, c0=None):
        seq = ops.permute(x, (0, 2, 1))
        n = x.shape[0]
        finals = []
        for layer in range(self.num_layers):
            p = self.params
            h_init = self._zeros_state(n, x.dtype) if h0 is None else h0[:, layer, :]
            c_init = self._zeros_state(n, x.dtype) if c0 is None else c0[:, layer, :]
            states, (h, _) = lstm_layer(seq, p[f"U{layer}"], p[f"W{layer}"], p[f"b{layer}"], h_init, c_init)
            finals.append(h)
            seq = ops.stack(states, axis=1)
        return seq, ops.stack(finals, axis=1)


def gru_forward(seq: Tensor, layer: GRU, h0: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Unbatched convenience: ``seq`` is [L, D]; returns ([L, H], [layers, H])."""
    if seq.ndim != 2:
        raise ShapeError(f"gru_forward expects [L, D], got {seq.shape}")
    x = ops.reshape(ops.transpose(seq), (1, seq.shape[1], seq.shape[0]))
    h0b = None if h0 is None else ops.reshape(h0, (1, *h0.shape))
    outputs, final = layer.run(x, h0b)
    return outputs[0], final[0]


LAYER_TYPES = {cls.kind: cls for cls in (Conv1d, BatchNorm1d, ReLU, MaxPool1d, Dropout,
                                         Flatten, Linear, GRU, RNN, LSTM)}

TABLE_NAMES = {"conv1d": "Conv1d", "batchnorm1d": "BatchNorm1d", "relu": "ReLU",
               "maxpool1d": "MaxPool1d", "dropout": "Dropout", "flatten": "Flatten",
               "linear": "Linear", "gru": "GRU", "rnn": "RNN", "lstm": "LSTM"}
