"""CSV/SVG emitters for importance reports, interaction heatmaps and timing tables."""

from __future__ import annotations

import json
import time
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

from .attribution import METHOD_TITLES, METHODS, Attribution, Differentiable, explain
from .importance import ImportanceReport, InteractionMatrix


def gfi_csv(report: ImportanceReport, k: int | None = None) -> str:
    lines = ["rank,feature,score"]
    lines += [f"{r},{_q(n)},{s:.9g}" for r, n, s in report.ranked(k)]
    return "\n".join(lines) + "\n"


def pcfi_csv(report: ImportanceReport) -> str:
    if report.pcfi is None:
        raise ValueError("report has no per-class scores")
    labels = report.class_names or [str(c) for c in range(len(report.pcfi))]
    lines = ["class,feature,score,rank"]
    for c, label in enumerate(labels):
        if not report.present[c]:
            lines.append(f"{label},,absent,")
            continue
        for r, i in enumerate(report.class_ranking(c)):
            lines.append(f"{label},{_q(report.names[i])},{report.pcfi[c, i]:.9g},{r + 1}")
    return "\n".join(lines) + "\n"


def interaction_csv(m: InteractionMatrix, which: str = "normalized") -> str:
    mat = m.normalized if which == "normalized" else m.raw
    lines = ["," + ",".join(_q(n) for n in m.names)]
    for name, row in zip(m.names, mat):
        lines.append(_q(name) + "," + ",".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + "\n"


def _q(s: str) -> str:
    return f'"{s}"' if "," in s or '"' in s else s


def _color(v: float) -> str:
    """Diverging blue-white-red for v in [-1, 1]."""
    v = float(np.clip(v, -1, 1))
    if v >= 0:
        g = int(round(255 * (1 - v)))
        return f"rgb(255,{g},{g})"
    g = int(round(255 * (1 + v)))
    return f"rgb({g},{g},255)"


def heatmap_svg(matrix: np.ndarray, labels: Sequence[str], title: str = "") -> str:
    n = len(labels)
    cell, left, top = 18, 200, 40 + 200
    w, h = left + n * cell + 20, top + n * cell + 20
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">',
             f'<text x="{left}" y="20" font-size="14">{escape(title)}</text>']
    for i, name in enumerate(labels):
        y = top + i * cell + cell * 0.7
        parts.append(f'<text x="{left - 4}" y="{y:.1f}" text-anchor="end">{escape(name)}</text>')
        x = left + i * cell + cell * 0.7
        parts.append(f'<text transform="translate({x:.1f},{top - 4}) rotate(-90)">{escape(name)}</text>')
    for i in range(n):
        for j in range(n):
            v = matrix[i, j]
            parts.append(f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" height="{cell}" '
                         f'fill="{_color(v)}"><title>{escape(labels[i])} / {escape(labels[j])}: {v:.3f}</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def curves_svg(series: dict[str, Sequence[float]], title: str = "", ylabel: str = "") -> str:
    """Line plot of one or more per-epoch series."""
    w, h, pad = 480, 300, 45
    vals = [v for s in series.values() for v in s if np.isfinite(v)]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    hi = hi if hi > lo else lo + 1
    longest = max((len(s) for s in series.values()), default=1)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">',
             f'<text x="{pad}" y="18" font-size="13">{escape(title)}</text>',
             f'<line x1="{pad}" y1="{h - pad}" x2="{w - 10}" y2="{h - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{h - pad}" x2="{pad}" y2="30" stroke="black"/>',
             f'<text x="{pad - 4}" y="34" text-anchor="end">{hi:.3g}</text>',
             f'<text x="{pad - 4}" y="{h - pad}" text-anchor="end">{lo:.3g}</text>',
             f'<text x="{w / 2}" y="{h - 10}" text-anchor="middle">epoch</text>',
             f'<text transform="translate(12,{h / 2}) rotate(-90)" text-anchor="middle">{escape(ylabel)}</text>']
    for k, (name, s) in enumerate(series.items()):
        pts = []
        for i, v in enumerate(s):
            x = pad + (w - pad - 10) * (i / max(1, longest - 1))
            y = (h - pad) - (h - pad - 30) * ((v - lo) / (hi - lo))
            pts.append(f"{x:.1f},{y:.1f}")
        col = colors[k % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{w - 120}" y="{40 + 14 * k}" fill="{col}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_attribution(attr: Attribution, path: str | Path) -> None:
    """``<path>.json`` manifest plus ``<path>.f32`` little-endian values."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    man = {"method": attr.method, "baseline": attr.baseline, "shape": list(np.shape(attr.values)),
           "target": np.atleast_1d(attr.target).tolist(), "f_x": np.atleast_1d(attr.f_x).tolist(),
           "f_baseline": np.atleast_1d(attr.f_baseline).tolist(), "extra": attr.extra}
    p.with_suffix(".json").write_text(json.dumps(man, indent=2), encoding="utf-8")
    p.with_suffix(".f32").write_bytes(np.asarray(attr.values, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# timing

def attribution_timing(models: dict[str, tuple[Differentiable, np.ndarray, np.ndarray, np.ndarray]],
                       methods: Sequence[str] = METHODS, steps: int = 50, n_samples: int = 20,
                       seed: int = 0, batch_size: int = 256) -> dict[str, dict[str, float]]:
    """Wall-clock seconds per (model, method).

    ``models`` maps a name to (model, windows, targets, baselines); the sample
    budget is the number of windows given. DeepLIFT SHAP uses every baseline.
    """
    table: dict[str, dict[str, float]] = {}
    for name, (model, x, target, baselines) in models.items():
        row = {}
        for m in methods:
            start = time.perf_counter()
            explain(m, model, x, baselines, target, steps=steps, n_samples=n_samples, seed=seed,
                    batch_size=batch_size)
            row[m] = time.perf_counter() - start
        table[name] = row
    return table


def timing_csv(table: dict[str, dict[str, float]], methods: Sequence[str] = METHODS) -> str:
    lines = ["Model," + ",".join(METHOD_TITLES[m] for m in methods)]
    for name, row in table.items():
        lines.append(name + "," + ",".join(f"{row[m]:.4f}" for m in methods))
    return "\n".join(lines) + "\n"
