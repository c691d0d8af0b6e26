"""Training loop, metrics, recurrent baselines and a small grid search."""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, ops
from .nn.model import LayerSpec, Model, ModelSpec, baseline_spec, build_model, count_params, hybrid_spec
from .preprocess import LabeledWindowDataset, class_weights

SAMPLINGS = ("none", "undersample", "smote", "class_weights")

_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # renamed in numpy 2


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 1024
    epochs: int = 256
    optimizer: str = "adam"
    dropout: float = 0.3
    l1: float = 1e-4
    l2: float = 1e-4
    patience: int = 8
    scheduler: str = "cosine"
    sampling: str = "none"
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "batch_size", "epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("regularization strengths must be non-negative")
        if self.patience > self.epochs:
            raise ValueError("patience cannot exceed the epoch budget")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"unknown sampling {self.sampling!r}; expected one of {SAMPLINGS}")
        if self.optimizer != "adam" or self.scheduler not in ("cosine", "constant"):
            raise ValueError("only the adam optimizer with cosine or constant schedule is available")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# objective

def regularization(params: Sequence[Tensor], l1: float, l2: float) -> Tensor:
    total = None
    for p in params:
        term = ops.scale(ops.sum(ops.abs(p)), l1) + ops.scale(ops.sum(ops.square(p)), l2)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def loss(logits: Tensor, labels, weights: np.ndarray | None = None, params: Sequence[Tensor] = (),
         l1: float = 0.0, l2: float = 0.0) -> Tensor:
    """Mean weighted cross-entropy plus l1*sum|theta| + l2*sum(theta^2).

    ``weights`` are per-class; BN running statistics are buffers and never
    appear in ``params``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    per_sample = None if weights is None else np.asarray(weights)[labels]
    ce = ops.cross_entropy(logits, labels, per_sample)
    if params and (l1 or l2):
        return ce + regularization(params, l1, l2)
    return ce


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: dict | None,
              lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Functional Adam update on plain arrays; returns (new params, new state)."""
    state = state or {"t": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to adam_step")
    t = state["t"] + 1
    m = [beta1 * mi + (1 - beta1) * g for mi, g in zip(state["m"], grads)]
    v = [beta2 * vi + (1 - beta2) * g * g for vi, g in zip(state["v"], grads)]
    new = [p - lr * (mi / (1 - beta1**t)) / (np.sqrt(vi / (1 - beta2**t)) + eps)
           for p, mi, vi in zip(params, m, v)]
    return new, {"t": t, "m": m, "v": v}


def cosine_lr(epoch: float, total: float, lr_max: float, lr_min: float = 0.0) -> float:
    if total <= 0:
        raise ValueError("cosine schedule needs a positive period")
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * epoch / total))


class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True once patience is exhausted."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.bad = value, epoch, 0
            return False
        self.bad += 1
        return self.bad >= self.patience


# ---------------------------------------------------------------------------
# training

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    train_time: float
    stopped_early: bool

    def history_lines(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.history)


def dataset_loss(model: Model, ds: LabeledWindowDataset, weights=None, batch_size: int = 512):
    logits = model.logits(ds.windows, batch_size)
    logp = ops.log_softmax_np(logits.astype(np.float64))
    w = np.ones(len(ds)) if weights is None else np.asarray(weights)[ds.labels]
    ce = float(-(w * logp[np.arange(len(ds)), ds.labels]).mean())
    return ce, float((logits.argmax(1) == ds.labels).mean())


def train(model: Model, train_ds: LabeledWindowDataset, val_ds: LabeledWindowDataset,
          config: TrainConfig | None = None, log: Callable[[EpochRecord], None] | None = None,
          time_budget: float | None = None) -> TrainResult:
    """Mini-batch Adam with per-epoch cosine schedule and early stopping on validation loss.

    Returns the model restored to its best-validation-loss state.
    """
    cfg = config or TrainConfig()
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("training and validation sets must be non-empty")
    batch = min(cfg.batch_size, len(train_ds))
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg.lr)
    weights = class_weights(np.maximum(train_ds.class_counts(), 1)) if cfg.sampling == "class_weights" else None
    stopper = EarlyStopping(cfg.patience)
    best_state = model.state()
    history: list[EpochRecord] = []
    start = time.perf_counter()
    stopped = False
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr) if cfg.scheduler == "cosine" else cfg.lr
        opt.lr = lr
        order = rng.permutation(len(train_ds))
        tot_loss = tot_correct = 0.0
        for b, i in enumerate(range(0, len(order), batch)):
            idx = order[i : i + batch]
            x = Tensor(train_ds.windows[idx].astype(model.dtype, copy=False))
            y = train_ds.labels[idx]
            with Tape() as tape:
                logits = model.forward(x, train=True, rng=rng)
                obj = loss(logits, y, weights, params, cfg.l1, cfg.l2)
            if not np.isfinite(obj.item()):
                raise TrainingDiverged(epoch, b)
            grads = tape.backward(obj)
            gs = [grads[p] for p in params]
            if not all(np.isfinite(g).all() for g in gs):
                raise TrainingDiverged(epoch, b, "gradient")
            opt.step(gs)
            tot_loss += obj.item() * len(idx)
            tot_correct += float((logits.data.argmax(1) == y).sum())
        val_loss, val_acc = dataset_loss(model, val_ds, weights)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, -1, "validation loss")
        rec = EpochRecord(epoch, lr, tot_loss / len(order), tot_correct / len(order), val_loss, val_acc)
        history.append(rec)
        if log:
            log(rec)
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = model.state()
        if stop:
            stopped = True
            break
        if time_budget is not None and time.perf_counter() - start > time_budget:
            break
    model.load_state(best_state)
    return TrainResult(model, history, stopper.best_epoch, stopper.best,
                       time.perf_counter() - start, stopped)


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsReport:
    confusion: np.ndarray
    class_names: list[str]
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict = field(default_factory=dict)
    train_time: float | None = None
    test_time: float | None = None
    roc: dict = field(default_factory=dict)

    def normalized(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1, keepdims=True)
        return np.divide(self.confusion, rows, out=np.zeros(self.confusion.shape), where=rows > 0)

    def to_dict(self) -> dict:
        return {
            "Accuracy": self.accuracy, "Precision": self.precision, "Recall": self.recall,
            "F1-Score": self.f1, "Train Time": self.train_time, "Test Time": self.test_time,
            "classes": self.class_names, "confusion": self.confusion.tolist(),
            "per_class": self.per_class, "auc": {k: v["auc"] for k, v in self.roc.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def confusion_csv(self) -> str:
        lines = ["true\\pred," + ",".join(self.class_names)]
        for name, row in zip(self.class_names, self.confusion):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion_matrix(y_true, y_pred, k: int) -> np.ndarray:
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray, class_names: Sequence[str] | None = None) -> MetricsReport:
    """Accuracy = trace/total; macro P/R/F1 with zero-denominator entries scored 0."""
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    k = cm.shape[0]
    names = list(class_names) if class_names else [str(i) for i in range(k)]
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    prec = np.divide(tp, pred, out=np.zeros(k), where=pred > 0)
    rec = np.divide(tp, true, out=np.zeros(k), where=true > 0)
    f1 = np.divide(2 * prec * rec, prec + rec, out=np.zeros(k), where=(prec + rec) > 0)
    per = {n: {"precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
           for n, p, r, f, s in zip(names, prec, rec, f1, true)}
    return MetricsReport(cm, names, float(tp.sum() / total), float(prec.mean()), float(rec.mean()),
                         float(f1.mean()), per)


def roc_curve(scores: np.ndarray, positive: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """One-vs-rest ROC (fpr, tpr) with trapezoidal AUC; ties handled by grouping thresholds."""
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], positive[order].astype(np.float64)
    distinct = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    p, n = y.sum(), len(y) - y.sum()
    tpr = np.r_[0.0, tps / p] if p else np.zeros(len(tps) + 1)
    fpr = np.r_[0.0, fps / n] if n else np.zeros(len(fps) + 1)
    return fpr, tpr, float(_trapezoid(tpr, fpr))


def evaluate(model: Model, ds: LabeledWindowDataset, batch_size: int = 512,
             train_time: float | None = None) -> MetricsReport:
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    start = time.perf_counter()
    proba = model.predict_proba(ds.windows, batch_size)
    test_time = time.perf_counter() - start
    k = model.spec.num_classes
    names = ds.class_names if len(ds.class_names) == k else [str(i) for i in range(k)]
    report = metrics_from_confusion(confusion_matrix(ds.labels, proba.argmax(1), k), names)
    report.train_time, report.test_time = train_time, test_time
    for c, name in enumerate(names):
        fpr, tpr, auc = roc_curve(proba[:, c], ds.labels == c)
        report.roc[name] = {"fpr": fpr.tolist(), "tpr": tpr.tolist(), "auc": auc}
    return report


# ---------------------------------------------------------------------------
# baselines and search

def build_baseline(kind: str, hidden: int = 64, layers: int = 1, classes: int = 7,
                   input_channels: int = 24, window: int = 50, seed: int = 0) -> Model:
    return build_model(baseline_spec(kind, hidden, layers, input_channels, window, classes), seed)


SEARCH_SPACE = {
    "conv_layers": [1, 2, 3, 4, 5, 6, 7],
    "gru_layers": [1, 2, 3, 4],
    "hidden": [32, 64, 256, 512],
    "fc_layers": [1, 2, 3, 4, 5, 6, 7],
    "resampling": ["none", "undersample", "smote"],
    "window": [10, 50, 100, 500, 1000],
    "step": [10, 50, 100, 500, 1000],
}

OPTIMA = {
    "flm": {"window": 500, "step": 10, "resampling": "smote"},
    "ftcm": {"window": 50, "step": 100, "resampling": "undersample"},
}


def search_spec(cfg: dict, input_channels: int = 24, num_classes: int = 7, base_channels: int = 8,
                fc_hidden: int = 32, dropout: float = 0.3) -> ModelSpec:
    """Hybrid spec for one grid point: doubling conv widths, stride-1 pools, fc_layers dense layers."""
    n = cfg["conv_layers"]
    chans = [base_channels * 2**i for i in range(n)]
    spec = hybrid_spec(chans, [1] * n, hidden=cfg["hidden"], gru_layers=cfg["gru_layers"],
                       fc_hidden=fc_hidden, dropout=dropout, input_channels=input_channels,
                       window=cfg["window"], num_classes=num_classes, name="search")
    # hybrid_spec gives two dense layers; extend or shrink the head to fc_layers
    head_start = next(i for i, l in enumerate(spec.layers) if l.kind == "gru") + 1
    body = spec.layers[:head_start]
    head = []
    width = cfg["hidden"]
    for _ in range(cfg["fc_layers"] - 1):
        head += [LayerSpec("linear", {"in_features": width, "out_features": fc_hidden}),
                 LayerSpec("relu"), LayerSpec("dropout", {"rate": dropout})]
        width = fc_hidden
    head.append(LayerSpec("linear", {"in_features": width, "out_features": num_classes}))
    spec.layers = body + head
    return spec


@dataclass
class SearchResult:
    config: dict
    val_accuracy: float
    params: int
    metrics: dict = field(default_factory=dict)


def _config_key(cfg: dict):
    return tuple((k, str(cfg[k])) for k in sorted(cfg))


def rank_results(results: list[SearchResult]) -> list[SearchResult]:
    """Best validation accuracy first; ties go to fewer parameters, then lexicographic config."""
    return sorted(results, key=lambda r: (-r.val_accuracy, r.params, _config_key(r.config)))


def grid_search(space: dict, budget: int, objective: Callable[[dict], SearchResult | tuple],
                seed: int = 0) -> list[SearchResult]:
    """Evaluate every point (or a seeded uniform subset of ``budget`` points) and rank."""
    if budget <= 0:
        raise ValueError("search budget must be positive")
    keys = sorted(space)
    points = [dict(zip(keys, vals)) for vals in itertools.product(*(space[k] for k in keys))]
    if budget < len(points):
        pick = np.sort(np.random.default_rng(seed).choice(len(points), budget, replace=False))
        points = [points[i] for i in pick]
    results = []
    for cfg in points:
        r = objective(cfg)
        if not isinstance(r, SearchResult):
            acc, params = r[:2]
            r = SearchResult(cfg, float(acc), int(params), r[2] if len(r) > 2 else {})
        results.append(r)
    return rank_results(results)


def spec_params(spec: ModelSpec) -> int:
    return count_params(spec).total
