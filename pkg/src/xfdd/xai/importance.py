"""Aggregations of attributions: global and per-class importance, pairwise interactions,
and top-k feature selection."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..datagen import FEATURES
from ..nn.model import ModelSpec
from .attribution import Differentiable, mask_channels, target_logits

INTERACTION_TOL = 1e-9
NORM_EPS = 1e-12


def _ranking(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score; equal scores keep channel order."""
    return np.lexsort((np.arange(len(scores)), -scores))


@dataclass
class ImportanceReport:
    gfi: np.ndarray  # [C]
    names: list[str]
    method: str = "custom"
    baseline: str = "custom"
    pcfi: np.ndarray | None = None  # [K, C]; NaN rows for absent classes
    class_names: list[str] | None = None
    present: np.ndarray | None = None

    @property
    def ranking(self) -> np.ndarray:
        return _ranking(self.gfi)

    def ranked(self, k: int | None = None) -> list[tuple[int, str, float]]:
        """(rank, feature name, score) rows, rank starting at 1."""
        order = self.ranking[:k]
        return [(r + 1, self.names[i], float(self.gfi[i])) for r, i in enumerate(order)]

    def class_ranking(self, c: int) -> np.ndarray | None:
        if self.pcfi is None or not self.present[c]:
            return None
        return _ranking(self.pcfi[c])

    def shared_unique(self, k: int = 10) -> dict:
        """Features in every present class's top-k, and those unique to a single class."""
        if self.pcfi is None:
            raise ValueError("no per-class scores in this report")
        tops = {c: set(self.class_ranking(c)[:k].tolist()) for c in range(len(self.pcfi)) if self.present[c]}
        shared = set.intersection(*tops.values()) if tops else set()
        label = self.class_names or [str(c) for c in range(len(self.pcfi))]
        unique = {}
        for c, top in tops.items():
            others = set().union(*(t for d, t in tops.items() if d != c))
            unique[label[c]] = [self.names[i] for i in sorted(top - others)]
        return {"shared": [self.names[i] for i in sorted(shared)], "unique": unique}


def _abs_time_mean(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 2:
        v = v[None]
    return np.abs(v).mean(axis=2)  # [N, C]


def gfi(values: np.ndarray, names: Sequence[str] | None = None, method: str = "custom",
        baseline: str = "custom") -> ImportanceReport:
    """Mean over samples and timesteps of |attribution| per channel."""
    per = _abs_time_mean(values)
    if len(per) == 0:
        raise ValueError("global importance needs at least one attribution")
    names = list(names) if names is not None else (list(FEATURES) if per.shape[1] == len(FEATURES)
                                                   else [f"ch{i}" for i in range(per.shape[1])])
    return ImportanceReport(per.mean(axis=0), names, method, baseline)


def pcfi(values: np.ndarray, labels: Sequence[int], num_classes: int = 7,
         names: Sequence[str] | None = None, class_names: Sequence[str] | None = None,
         method: str = "custom", baseline: str = "custom") -> ImportanceReport:
    """Per-class means of |attribution|; classes without samples get a NaN row flagged absent."""
    per = _abs_time_mean(values)
    labels = np.asarray(labels)
    report = gfi(values, names, method, baseline)
    mat = np.full((num_classes, per.shape[1]), np.nan)
    present = np.zeros(num_classes, dtype=bool)
    for c in range(num_classes):
        sel = labels == c
        if sel.any():
            mat[c] = per[sel].mean(axis=0)
            present[c] = True
    report.pcfi, report.present = mat, present
    report.class_names = list(class_names) if class_names is not None else None
    return report


# ---------------------------------------------------------------------------
# interactions

@dataclass
class InteractionMatrix:
    raw: np.ndarray  # I(i, j), diagonal holds A({i})
    normalized: np.ndarray
    flagged: list[tuple[int, int]]
    names: list[str]
    single: np.ndarray  # A({i})
    pair: np.ndarray  # A({i, j})
    extra: dict = field(default_factory=dict)


def feature_interactions(model: Differentiable, x: np.ndarray, baseline: np.ndarray, target,
                         names: Sequence[str] | None = None, channels: Sequence[int] | None = None,
                         batch_size: int = 512) -> InteractionMatrix:
    """Masked-effect interactions.

    A(S) = mean over samples of f_c(x) - f_c(x with channels S from the baseline);
    I(i, j) = A({i, j}) - A({i}) - A({j}). A pair is flagged when the joint
    effect exceeds the sum of the individual effects, i.e. I > tol.
    """
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if len(x) == 0:
        raise ValueError("interaction analysis needs at least one sample")
    n, c_all, _ = x.shape
    chans = list(range(c_all)) if channels is None else list(channels)
    c = len(chans)
    b = np.broadcast_to(np.asarray(baseline, dtype=x.dtype), x.shape)
    t = np.broadcast_to(np.asarray(target, dtype=np.int64), (n,))
    f_x = target_logits(model, x, t, batch_size)

    def effect(subset: list[int]) -> float:
        return float((f_x - target_logits(model, mask_channels(x, b, subset), t, batch_size)).mean())

    single = np.array([effect([ch]) for ch in chans])
    if np.all(np.abs(single) <= NORM_EPS):
        raise ValueError("every single-channel masking effect is zero; the model ignores its inputs")
    pair = np.zeros((c, c))
    raw = np.zeros((c, c))
    for i in range(c):
        pair[i, i] = single[i]
        raw[i, i] = single[i]
        for j in range(i + 1, c):
            pair[i, j] = pair[j, i] = effect([chans[i], chans[j]])
            raw[i, j] = raw[j, i] = pair[i, j] - single[i] - single[j]
    denom = np.maximum(np.maximum.outer(np.abs(single), np.abs(single)), NORM_EPS)
    norm = np.clip(raw / denom, -1.0, 1.0)
    np.fill_diagonal(norm, 1.0)
    flagged = [(i, j) for i in range(c) for j in range(i + 1, c) if raw[i, j] > INTERACTION_TOL]
    all_names = list(names) if names is not None else (list(FEATURES) if c_all == len(FEATURES)
                                                       else [f"ch{i}" for i in range(c_all)])
    return InteractionMatrix(raw, norm, flagged, [all_names[ch] for ch in chans], single, pair)


# ---------------------------------------------------------------------------
# selection

@dataclass
class FeatureSelection:
    indices: list[int]  # in rank order
    names: list[str]
    boundary_tie: bool
    dataset: object | None = None
    spec: ModelSpec | None = None


def select_top_k(report: ImportanceReport, k: int, dataset=None, spec: ModelSpec | None = None) -> FeatureSelection:
    """Top-k channels by GFI (ties broken by channel index), plus reduced dataset and spec."""
    c = len(report.gfi)
    if not 1 <= k <= c:
        raise ValueError(f"k must lie in [1, {c}], got {k}")
    order = report.ranking
    idx = [int(i) for i in order[:k]]
    tie = k < c and report.gfi[order[k - 1]] == report.gfi[order[k]]
    ds = dataset.select_channels(idx) if dataset is not None else None
    new_spec = spec.with_input(channels=k) if spec is not None else None
    return FeatureSelection(idx, [report.names[i] for i in idx], bool(tie), ds, new_spec)


def permute_report(report: ImportanceReport, perm: Sequence[int]) -> ImportanceReport:
    """Report for the channel order ``perm`` (new channel i = old channel perm[i])."""
    perm = list(perm)
    return replace(report, gfi=report.gfi[perm], names=[report.names[i] for i in perm],
                   pcfi=None if report.pcfi is None else report.pcfi[:, perm])
