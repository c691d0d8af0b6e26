"""Declarative layer stacks, the two shipped hybrid architectures and parameter accounting."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import ShapeError, Tensor, no_record
from ..autodiff.ops import softmax_np
from .layers import LAYER_TYPES, TABLE_NAMES, Layer

NUM_CLASSES = 7


class SpecError(ValueError):
    pass


@dataclass
class LayerSpec:
    kind: str
    args: dict = field(default_factory=dict)


@dataclass
class ModelSpec:
    layers: list[LayerSpec]
    input_channels: int = 24
    window_length: int = 500
    num_classes: int = NUM_CLASSES
    name: str = "custom"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["layers"] = [LayerSpec(l["kind"], dict(l.get("args", {}))) for l in d["layers"]]
        return cls(**d)

    def with_input(self, channels: int | None = None, window: int | None = None) -> "ModelSpec":
        """Same stack re-fitted to a different input; the first conv/recurrent layer adapts."""
        spec = copy.deepcopy(self)
        if channels is not None:
            spec.input_channels = channels
            for layer in spec.layers:
                if layer.kind == "conv1d":
                    layer.args["in_channels"] = channels
                    break
                if layer.kind in ("gru", "rnn", "lstm"):
                    layer.args["input_size"] = channels
                    break
        if window is not None:
            spec.window_length = window
        return spec


def _conv_block(c_in: int, c_out: int, pool_stride: int) -> list[LayerSpec]:
    return [
        LayerSpec("conv1d", {"in_channels": c_in, "out_channels": c_out, "kernel_size": 3,
                             "stride": 1, "padding": 1}),
        LayerSpec("batchnorm1d", {"channels": c_out}),
        LayerSpec("relu"),
        LayerSpec("maxpool1d", {"kernel_size": 2, "stride": pool_stride}),
    ]


def hybrid_spec(channels: list[int], pool_strides: list[int], hidden: int = 512,
                gru_layers: int = 2, fc_hidden: int = 128, dropout: float = 0.3,
                input_channels: int = 24, window: int = 500, num_classes: int = NUM_CLASSES,
                name: str = "hybrid") -> ModelSpec:
    """Conv blocks (conv, batchnorm, relu, pool) -> GRU stack -> FC, relu, dropout -> FC."""
    layers: list[LayerSpec] = []
    c_in = input_channels
    for c_out, s in zip(channels, pool_strides):
        layers += _conv_block(c_in, c_out, s)
        c_in = c_out
    layers += [
        LayerSpec("gru", {"input_size": c_in, "hidden_size": hidden, "num_layers": gru_layers}),
        LayerSpec("linear", {"in_features": hidden, "out_features": fc_hidden}),
        LayerSpec("relu"),
        LayerSpec("dropout", {"rate": dropout}),
        LayerSpec("linear", {"in_features": fc_hidden, "out_features": num_classes}),
    ]
    return ModelSpec(layers, input_channels, window, num_classes, name)


def ftcm_spec(input_channels: int = 24, window: int = 500, channel_divisor: int = 1,
              hidden: int = 512, num_classes: int = NUM_CLASSES) -> ModelSpec:
    """Fault type classification model; the last pool halves the sequence."""
    chans = [c // channel_divisor for c in (32, 64, 128, 256)]
    return hybrid_spec(chans, [1, 1, 1, 2], hidden=hidden, input_channels=input_channels,
                       window=window, num_classes=num_classes, name="ftcm")


def flm_spec(input_channels: int = 24, window: int = 500, channel_divisor: int = 1,
             hidden: int = 512, num_classes: int = NUM_CLASSES) -> ModelSpec:
    """Fault localization model: five conv blocks, all pools stride 1."""
    chans = [c // channel_divisor for c in (32, 64, 128, 256, 512)]
    return hybrid_spec(chans, [1] * 5, hidden=hidden, input_channels=input_channels,
                       window=window, num_classes=num_classes, name="flm")


def baseline_spec(kind: str, hidden: int = 64, layers: int = 1, input_channels: int = 24,
                  window: int = 50, num_classes: int = NUM_CLASSES) -> ModelSpec:
    """Plain recurrent classifier over the raw window: recurrent stack -> last state -> FC."""
    if kind not in ("rnn", "lstm", "gru"):
        raise SpecError(f"unknown baseline kind {kind!r}")
    return ModelSpec([
        LayerSpec(kind, {"input_size": input_channels, "hidden_size": hidden, "num_layers": layers}),
        LayerSpec("linear", {"in_features": hidden, "out_features": num_classes}),
    ], input_channels, window, num_classes, kind)


@dataclass
class SummaryRow:
    name: str
    kind: str
    shape: list
    params: int
    table_params: int


def propagate(spec: ModelSpec, layers: list[Layer] | None = None) -> list[SummaryRow]:
    """Shape propagation over the stack; raises SpecError naming the first bad layer."""
    if layers is None:
        layers = [_make_layer(ls, np.random.default_rng(0), np.float32, i)
                  for i, ls in enumerate(spec.layers)]
    shape: tuple = (spec.input_channels, spec.window_length)
    rows = []
    for i, layer in enumerate(layers):
        name = f"{TABLE_NAMES[layer.kind]}-{i + 1}"
        try:
            table = layer.table_shape(shape)
            shape = layer.out_shape(shape)
        except ShapeError as exc:
            raise SpecError(f"shape propagation failed at {name}: {exc}") from exc
        n = layer.param_count()
        rows.append(SummaryRow(name, layer.kind, table, n, 0 if layer.recurrent else n))
    if tuple(shape) != (spec.num_classes,):
        where = rows[-1].name if rows else "<empty spec>"
        raise SpecError(f"final output shape {tuple(shape)} after {where} "
                        f"does not match {spec.num_classes} classes")
    return rows


def _make_layer(ls: LayerSpec, rng, dtype, index: int) -> Layer:
    cls = LAYER_TYPES.get(ls.kind)
    if cls is None:
        raise SpecError(f"layer {index + 1}: unknown kind {ls.kind!r}")
    args = dict(ls.args)
    if ls.kind in ("conv1d", "linear", "gru", "rnn", "lstm"):
        args["rng"] = rng
    if ls.kind in ("conv1d", "linear", "gru", "rnn", "lstm", "batchnorm1d"):
        args["dtype"] = dtype
    try:
        return cls(**args)
    except TypeError as exc:
        raise SpecError(f"layer {index + 1} ({ls.kind}): {exc}") from exc


class Model:
    """A built layer stack. ``forward`` returns pre-softmax logits [N, K]."""

    def __init__(self, spec: ModelSpec, layers: list[Layer], dtype=np.float32, seed: int | None = None):
        self.spec = spec
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.summary = propagate(spec, layers)

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim == 2:
            x = x.reshape((1, *x.shape))
        for layer in self.layers:
            x = layer(x, train, rng)
        return x

    __call__ = forward

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for row, layer in zip(self.summary, self.layers):
            out += [(f"{row.name}.{k}", p) for k, p in layer.params.items()]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for row, layer in zip(self.summary, self.layers):
            out += [(f"{row.name}.{k}", b) for k, b in layer.buffers.items()]
        return out

    def state(self) -> dict[str, np.ndarray]:
        s = {k: p.data.copy() for k, p in self.named_parameters()}
        s.update({k: b.copy() for k, b in self.named_buffers()})
        return s

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.named_parameters():
            p.data[...] = state[k]
        for k, b in self.named_buffers():
            b[...] = state[k]

    def logits(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        outs = []
        with no_record():
            for i in range(0, len(x), batch_size):
                outs.append(self.forward(Tensor(x[i : i + batch_size])).data)
        if not outs:
            return np.zeros((0, self.spec.num_classes), dtype=self.dtype)
        return np.concatenate(outs)

    def predict_proba(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        return softmax_np(self.logits(x, batch_size))

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        return self.logits(x, batch_size).argmax(axis=1)

    def astype(self, dtype) -> "Model":
        """Copy of the model with parameters and buffers cast to ``dtype``."""
        twin = build_model(self.spec, seed=0, dtype=dtype)
        twin.seed = self.seed
        twin.load_state({k: v.astype(dtype) for k, v in self.state().items()})
        return twin


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    """Instantiate the stack with seeded uniform(+-1/sqrt(fan_in)) weights and zero biases."""
    rng = np.random.default_rng(seed)
    layers = [_make_layer(ls, rng, dtype, i) for i, ls in enumerate(spec.layers)]
    return Model(spec, layers, dtype, seed)


@dataclass
class ParamCount:
    per_layer: list[tuple[str, int]]
    non_recurrent: int
    recurrent: int

    @property
    def total(self) -> int:
        return self.non_recurrent + self.recurrent

    @property
    def table_total(self) -> int:
        """Total under the layer-summary convention, where recurrent rows count 0."""
        return self.non_recurrent


def count_params(model: Model | ModelSpec) -> ParamCount:
    if isinstance(model, ModelSpec):
        if not model.layers:
            return ParamCount([], 0, 0)
        model = build_model(model)
    rec = sum(r.params for r in model.summary if r.params != r.table_params)
    non = sum(r.table_params for r in model.summary)
    return ParamCount([(r.name, r.params) for r in model.summary], non, rec)
