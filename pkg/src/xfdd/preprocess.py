"""Windowing, stratified splitting, standardization and class-imbalance remedies."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import FEATURES, TASKS, Recording

STD_GUARD = 1e-12


@dataclass
class LabeledWindowDataset:
    windows: np.ndarray  # [N, C, W]
    labels: np.ndarray  # [N] int
    task: str = "fault_type"
    window: int = 0
    step: int = 0
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    channel_names: list[str] = field(default_factory=lambda: list(FEATURES))
    # SMOTE provenance: one row (source, neighbor, lambda) per synthetic sample, indices into the input
    provenance: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.windows) != len(self.labels):
            raise ValueError(f"{len(self.windows)} windows but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not self.window and self.windows.ndim == 3:
            self.window = self.windows.shape[2]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(TASKS.get(self.task, range(7)))

    @property
    def class_names(self) -> list[str]:
        return list(TASKS[self.task])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx) -> "LabeledWindowDataset":
        return replace(self, windows=self.windows[idx], labels=self.labels[idx], provenance=None)

    def select_channels(self, channels: Sequence[int]) -> "LabeledWindowDataset":
        ch = list(channels)
        return replace(
            self,
            windows=self.windows[:, ch],
            mean=None if self.mean is None else self.mean[ch],
            std=None if self.std is None else self.std[ch],
            channel_names=[self.channel_names[c] for c in ch],
            provenance=None,
        )


# ---------------------------------------------------------------------------
# windowing

def window(series: np.ndarray, width: int, step: int) -> np.ndarray:
    """Cut ``series`` [C, N] into [count, C, width] with count = floor((N-W)/S)+1."""
    series = np.asarray(series)
    if width < 1 or step < 1:
        raise ValueError("window width and step must be >= 1")
    n = series.shape[-1]
    if n < width:
        raise ValueError(f"series of length {n} is shorter than the window {width}")
    view = np.lib.stride_tricks.sliding_window_view(series, width, axis=-1)[:, ::step]
    return np.ascontiguousarray(view.transpose(1, 0, 2))


def window_count(n: int, width: int, step: int) -> int:
    return 0 if n < width else (n - width) // step + 1


def window_recordings(recordings: Sequence[Recording], task: str, width: int, step: int,
                      denoise: bool = False) -> LabeledWindowDataset:
    """Windows cut inside each recording; recordings shorter than ``width`` are skipped."""
    classes = TASKS[task]
    xs, ys = [], []
    for rec in recordings:
        if rec.n_samples < width:
            continue
        data = moving_average(rec.data) if denoise else rec.data
        w = window(data, width, step)
        xs.append(w)
        ys.append(np.full(len(w), classes.index(rec.label)))
    if not xs:
        raise ValueError("no recording is long enough for one window")
    return LabeledWindowDataset(np.concatenate(xs).astype(np.float32), np.concatenate(ys), task, width, step)


def moving_average(data: np.ndarray, width: int = 5) -> np.ndarray:
    """Centered moving average per channel with edge replication."""
    if width <= 1:
        return data.copy()
    pad = width // 2
    padded = np.pad(data, [(0, 0), (pad, width - 1 - pad)], mode="edge")
    c = np.cumsum(np.pad(padded, [(0, 0), (1, 0)]), axis=1)
    return (c[:, width:] - c[:, :-width]) / width


# ---------------------------------------------------------------------------
# splitting and scaling

def split(ds: LabeledWindowDataset, fractions: Sequence[float] = (0.7, 0.15, 0.15), seed: int = 0):
    """Stratified (train, val, test); floor allocations per class, remainder to train."""
    if abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    for c in np.unique(ds.labels):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        sizes = [int(np.floor(f * len(idx) + 1e-9)) for f in fractions[1:]]
        sizes.insert(0, len(idx) - sum(sizes))
        if min(sizes) == 0:
            raise ValueError(f"class {c} with {len(idx)} samples leaves an empty split {sizes}")
        start = 0
        for part, size in zip(parts, sizes):
            part.append(idx[start : start + size])
            start += size
    return tuple(ds.subset(np.sort(np.concatenate(p))) for p in parts)


def fit_stats(train: LabeledWindowDataset) -> tuple[np.ndarray, np.ndarray]:
    if len(train) == 0:
        raise ValueError("cannot fit standardization on an empty training set")
    x = train.windows.astype(np.float64)
    return x.mean(axis=(0, 2)), x.std(axis=(0, 2))


def apply_stats(ds: LabeledWindowDataset, mean: np.ndarray, std: np.ndarray) -> LabeledWindowDataset:
    safe = np.where(std > STD_GUARD, std, 1.0)
    z = (ds.windows.astype(np.float64) - mean[None, :, None]) / safe[None, :, None]
    z[:, std <= STD_GUARD] = 0.0
    return replace(ds, windows=z.astype(ds.windows.dtype), mean=mean, std=std)


def standardize_fit_apply(train: LabeledWindowDataset, *others: LabeledWindowDataset):
    """z-score every dataset with the training set's per-channel mean and population std."""
    mean, std = fit_stats(train)
    return (apply_stats(train, mean, std), *(apply_stats(o, mean, std) for o in others))


# ---------------------------------------------------------------------------
# imbalance

def rus(ds: LabeledWindowDataset, seed: int = 0) -> LabeledWindowDataset:
    """Undersample every class uniformly without replacement to the minimum count."""
    present = np.unique(ds.labels)
    if len(present) < 2:
        raise ValueError("undersampling needs at least two classes")
    rng = np.random.default_rng(seed)
    target = min(int((ds.labels == c).sum()) for c in present)
    keep = np.concatenate([rng.choice(np.flatnonzero(ds.labels == c), target, replace=False) for c in present])
    return ds.subset(rng.permutation(keep))


def _knn(x: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other rows (Euclidean), nearest first."""
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2 * x @ x.T
    np.fill_diagonal(d, np.inf)
    nn = np.argpartition(d, k - 1, axis=1)[:, :k]
    order = np.take_along_axis(d, nn, axis=1).argsort(axis=1, kind="stable")
    return np.take_along_axis(nn, order, axis=1)


def smote(ds: LabeledWindowDataset, k_neighbors: int = 5, seed: int = 0) -> LabeledWindowDataset:
    """Oversample every class to the maximum count by same-class interpolation.

    The result keeps all real samples first, then the synthetics; its
    ``provenance`` rows are (source index, neighbor index, lambda) into ``ds``.
    """
    rng = np.random.default_rng(seed)
    present = np.unique(ds.labels)
    counts = {int(c): int((ds.labels == c).sum()) for c in present}
    target = max(counts.values())
    flat = ds.windows.reshape(len(ds), -1).astype(np.float64)
    new_x, new_y, prov = [], [], []
    for c in present:
        need = target - counts[int(c)]
        if need == 0:
            continue
        members = np.flatnonzero(ds.labels == c)
        if len(members) <= k_neighbors:
            raise ValueError(f"class {int(c)} has {len(members)} samples; SMOTE needs more than "
                             f"k_neighbors={k_neighbors}")
        nn = _knn(flat[members], k_neighbors)
        src = rng.integers(0, len(members), need)
        nbr = nn[src, rng.integers(0, k_neighbors, need)]
        lam = rng.random(need)
        a, b = ds.windows[members[src]], ds.windows[members[nbr]]
        shape = (need,) + (1,) * (a.ndim - 1)
        new_x.append((a + lam.reshape(shape) * (b - a)).astype(ds.windows.dtype))
        new_y.append(np.full(need, c))
        prov.append(np.stack([members[src], members[nbr], lam], axis=1))
    if not new_x:
        return replace(ds, provenance=np.zeros((0, 3)))
    return replace(ds, windows=np.concatenate([ds.windows, *new_x]),
                   labels=np.concatenate([ds.labels, *new_y]), provenance=np.concatenate(prov))


def class_weights(counts: Sequence[int]) -> np.ndarray:
    """w_c = N / (K * n_c)."""
    counts = np.asarray(counts, dtype=np.float64)
    if (counts <= 0).any():
        raise ValueError(f"class weights need positive counts, got {counts.tolist()}")
    return counts.sum() / (len(counts) * counts)


def resample_targets(counts: Sequence[int], method: str) -> list[int]:
    """Per-class counts that ``rus``/``smote`` would produce, without materializing data."""
    counts = list(counts)
    if method in ("none", None):
        return counts
    if method in ("undersample", "rus"):
        return [min(counts)] * len(counts)
    if method == "smote":
        return [max(counts)] * len(counts)
    raise ValueError(f"unknown resampling {method!r}")


def resample(ds: LabeledWindowDataset, method: str, seed: int = 0, k_neighbors: int = 5):
    if method in ("none", "class_weights", None):
        return ds
    if method in ("undersample", "rus"):
        return rus(ds, seed)
    if method == "smote":
        return smote(ds, k_neighbors, seed)
    raise ValueError(f"unknown resampling {method!r}")


@dataclass
class Splits:
    train: LabeledWindowDataset
    val: LabeledWindowDataset
    test: LabeledWindowDataset


def pipeline(recordings: Sequence[Recording], task: str, width: int, step: int,
             resampling: str = "none", fractions=(0.7, 0.15, 0.15), seed: int = 0,
             denoise: bool = False) -> Splits:
    """Window, split, standardize on train statistics, then resample the training split only."""
    ds = window_recordings(recordings, task, width, step, denoise)
    train, val, test = split(ds, fractions, seed)
    train, val, test = standardize_fit_apply(train, val, test)
    return Splits(resample(train, resampling, seed), val, test)


# ---------------------------------------------------------------------------
# persistence

def save_dataset(ds: LabeledWindowDataset, path: str | Path, extra: dict | None = None) -> None:
    """Writes ``<path>.json`` manifest, ``<path>.f32`` windows and ``<path>.u8`` labels."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    man = {
        "task": ds.task, "window": ds.window, "step": ds.step,
        "shape": list(ds.windows.shape), "channels": ds.channel_names,
        "mean": None if ds.mean is None else ds.mean.tolist(),
        "std": None if ds.std is None else ds.std.tolist(),
        "counts": ds.class_counts().tolist(),
        **(extra or {}),
    }
    p.with_suffix(".json").write_text(json.dumps(man, indent=2, ensure_ascii=False), encoding="utf-8")
    p.with_suffix(".f32").write_bytes(np.ascontiguousarray(ds.windows, dtype="<f4").tobytes())
    p.with_suffix(".u8").write_bytes(ds.labels.astype(np.uint8).tobytes())


def load_dataset(path: str | Path) -> LabeledWindowDataset:
    p = Path(path)
    man = json.loads(p.with_suffix(".json").read_text(encoding="utf-8"))
    x = np.frombuffer(p.with_suffix(".f32").read_bytes(), dtype="<f4").reshape(man["shape"])
    y = np.frombuffer(p.with_suffix(".u8").read_bytes(), dtype=np.uint8).astype(np.int64)
    return LabeledWindowDataset(
        x.astype(np.float32), y, man["task"], man["window"], man["step"],
        None if man["mean"] is None else np.array(man["mean"]),
        None if man["std"] is None else np.array(man["std"]),
        man["channels"],
    )
