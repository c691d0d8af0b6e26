"""Command-line pipeline: datagen, preprocess, train, evaluate, explain, gridsearch.

Exit codes: 0 success, 64 usage, 2 I/O error, 3 missing prerequisite, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .datagen import TASKS, DatagenConfig, generate_dataset, load_dataset_dir, save_csv
from .nn.model import baseline_spec, build_model, flm_spec, ftcm_spec
from .nn.serialize import CheckpointError, load, save
from .preprocess import LabeledWindowDataset, load_dataset, pipeline, save_dataset
from .train import (
    SEARCH_SPACE,
    SearchResult,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    grid_search,
    search_spec,
    spec_params,
    train,
)
from .xai import (
    BASELINE_KINDS,
    METHOD_TITLES,
    METHODS,
    explain,
    feature_interactions,
    gfi_csv,
    heatmap_svg,
    interaction_csv,
    make_baseline,
    pcfi,
    pcfi_csv,
    select_top_k,
    timing_csv,
)
from .xai.report import curves_svg

SCHEMA_VERSION = 1
EXIT_OK, EXIT_IO, EXIT_MISSING, EXIT_NAN, EXIT_USAGE = 0, 2, 3, 4, 64
MODELS = ("ftcm", "flm", "rnn", "lstm", "gru")


class UsageError(Exception):
    pass


class MissingPrerequisite(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# environment, config and provenance

def deterministic() -> bool:
    return os.environ.get("XFDD_DETERMINISTIC", "") == "1"


@contextlib.contextmanager
def thread_limit():
    """Cap BLAS threads from XFDD_THREADS (forced to 1 in deterministic mode)."""
    n = 1 if deterministic() else os.environ.get("XFDD_THREADS")
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(n)):
        yield


def _task(name: str) -> str:
    t = name.replace("-", "_")
    if t not in TASKS:
        raise UsageError(f"unknown task {name!r}; expected fault-type or fault-location")
    return t


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise MissingPrerequisite(f"config file {p} not found")
    cfg = json.loads(p.read_text(encoding="utf-8"))
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise UsageError(f"config schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    return cfg


def _merge(section: dict, **flags) -> dict:
    """Command-line flags override config values when given."""
    out = dict(section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def _timed(value: float | None) -> float | None:
    return None if deterministic() else value


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


def write_provenance(out: Path, command: str, cfg: dict, seeds: dict, inputs: Sequence[str] = ()) -> None:
    files = {}
    for f in sorted(out.rglob("*")):
        if f.is_file() and f.name != "provenance.json":
            files[str(f.relative_to(out))] = hashlib.sha256(f.read_bytes()).hexdigest()
    man = {"schema_version": SCHEMA_VERSION, "tool_version": __version__, "command": command,
           "config": cfg, "config_hash": config_hash(cfg), "seeds": seeds,
           "inputs": list(inputs), "outputs": files}
    _write(out / "provenance.json", json.dumps(man, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_test"
    probe.write_text("")
    probe.unlink()
    return out


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingPrerequisite(f"{what} not found at {path}")
    return path


def _splits(data: Path) -> dict[str, LabeledWindowDataset]:
    return {name: load_dataset(_need(data / f"{name}.json", f"{name} split").with_suffix(""))
            for name in ("train", "val", "test")}


# ---------------------------------------------------------------------------
# commands

def cmd_datagen(args, cfg: dict) -> int:
    sec = _merge(cfg.get("datagen", {}), budget=args.budget, window=args.window, step=args.step,
                 imbalance=args.imbalance)
    task = _task(args.task or cfg.get("task", "fault_type"))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    budget = int(sec.pop("budget", 100))
    dcfg = DatagenConfig(**{k: v for k, v in sec.items() if k in DatagenConfig.__dataclass_fields__})
    out = _outdir(args.out)
    recs = generate_dataset(task, budget, dcfg, seed)
    counts = {}
    per_window = {}
    for r in recs:
        counts[r.label] = counts.get(r.label, 0) + 1
        per_window[r.label] = per_window.get(r.label, 0) + (r.n_samples - dcfg.window) // dcfg.step + 1
    save_csv(recs, out, task, extra={"seed": seed, "budget": budget, "config": dcfg.to_dict(),
                                     "window_counts": per_window, "seed_rule": "root seed + recording index"})
    full = {"task": task, "seed": seed, "budget": budget, "datagen": dcfg.to_dict()}
    write_provenance(out, "datagen", full, {"root": seed})
    print(f"wrote {len(recs)} recordings to {out} ({task}); windows per class: {per_window}")
    return EXIT_OK


def cmd_preprocess(args, cfg: dict) -> int:
    src = _need(Path(args.data) / "manifest.json", "dataset manifest").parent
    recs, man = load_dataset_dir(src)
    sec = _merge(cfg.get("preprocess", {}), window=args.window, step=args.step,
                 resampling=args.resampling, denoise=args.denoise or None)
    task = man.get("task") or "fault_type"
    width = int(sec.get("window", man.get("config", {}).get("window", 50)))
    step = int(sec.get("step", man.get("config", {}).get("step", 25)))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    resampling = sec.get("resampling", "none")
    fractions = tuple(sec.get("fractions", (0.7, 0.15, 0.15)))
    splits = pipeline(recs, task, width, step, resampling, fractions, seed, bool(sec.get("denoise", False)))
    out = _outdir(args.out)
    for name in ("train", "val", "test"):
        ds = getattr(splits, name)
        save_dataset(ds, out / name, {"seed": seed, "resampling": resampling if name == "train" else "none"})
    full = {"task": task, "window": width, "step": step, "resampling": resampling,
            "fractions": list(fractions), "seed": seed, "source_task": task}
    write_provenance(out, "preprocess", full, {"split": seed}, [str(src)])
    print(f"train/val/test = {len(splits.train)}/{len(splits.val)}/{len(splits.test)} windows -> {out}")
    return EXIT_OK


def _model_spec(kind: str, channels: int, window: int, sec: dict):
    div = int(sec.get("channel_divisor", 1))
    hidden = int(sec.get("hidden", 512 if kind in ("ftcm", "flm") else 64))
    if kind == "ftcm":
        return ftcm_spec(channels, window, div, hidden)
    if kind == "flm":
        return flm_spec(channels, window, div, hidden)
    return baseline_spec(kind, hidden, int(sec.get("layers", 1)), channels, window)


def _report_files(out: Path, report, history=None) -> None:
    d = report.to_dict()
    d["Train Time"], d["Test Time"] = _timed(d["Train Time"]), _timed(d["Test Time"])
    _write(out / "report.json", json.dumps(d, indent=2, sort_keys=True) + "\n")
    _write(out / "confusion.csv", report.confusion_csv())
    tt = "" if d["Train Time"] is None else f"{d['Train Time']:.3f}"
    st = "" if d["Test Time"] is None else f"{d['Test Time']:.3f}"
    _write(out / "report.csv", "Accuracy,Precision,Recall,F1-Score,Train Time,Test Time\n"
           f"{report.accuracy:.6f},{report.precision:.6f},{report.recall:.6f},{report.f1:.6f},{tt},{st}\n")


def cmd_train(args, cfg: dict) -> int:
    data = Path(args.data)
    splits = _splits(data)
    sec = _merge(cfg.get("train", {}), epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                 patience=args.patience, sampling=args.sampling, channel_divisor=args.channel_divisor,
                 hidden=args.hidden)
    kind = args.model or cfg.get("model", "ftcm")
    if kind not in MODELS:
        raise UsageError(f"unknown model {kind!r}; expected one of {MODELS}")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    features = None
    if args.features:
        sel = json.loads(_need(Path(args.features), "feature list").read_text(encoding="utf-8"))
        names = splits["train"].channel_names
        features = [names.index(n) for n in sel["features"]]
        splits = {k: v.select_channels(features) for k, v in splits.items()}
    tr = splits["train"]
    spec = _model_spec(kind, tr.windows.shape[1], tr.windows.shape[2], sec)
    tcfg_keys = TrainConfig.__dataclass_fields__
    kwargs = {k: v for k, v in sec.items() if k in tcfg_keys and k != "seed"}
    # short smoke runs clamp patience to the epoch budget
    epochs = int(kwargs.get("epochs", TrainConfig.epochs))
    kwargs["patience"] = min(int(kwargs.get("patience", TrainConfig.patience)), epochs)
    try:
        tcfg = TrainConfig(**kwargs, seed=seed)
    except ValueError as exc:
        raise UsageError(f"invalid training config: {exc}") from exc
    model = build_model(spec, seed=seed)
    out = _outdir(args.out)
    result = train(model, tr, splits["val"], tcfg,
                   log=lambda r: print(f"epoch {r.epoch}: loss {r.train_loss:.4f} val_loss {r.val_loss:.4f} "
                                       f"val_acc {r.val_acc:.4f}", flush=True))
    save(model, out / "model.ckpt")
    _write(out / "history.jsonl", result.history_lines())
    report = evaluate(model, splits["test"], train_time=result.train_time)
    _report_files(out, report)
    h = result.history
    _write(out / "loss.svg", curves_svg({"train": [r.train_loss for r in h], "validation": [r.val_loss for r in h]},
                                        f"{kind} loss", "loss"))
    _write(out / "accuracy.svg", curves_svg({"train": [r.train_acc for r in h], "validation": [r.val_acc for r in h]},
                                            f"{kind} accuracy", "accuracy"))
    full = {"model": kind, "spec": spec.to_dict(), "train": tcfg.to_dict(),
            "features": None if features is None else tr.channel_names}
    write_provenance(out, "train", full, {"init": seed, "shuffle": seed}, [str(data)])
    print(f"test accuracy {report.accuracy:.4f}, macro F1 {report.f1:.4f} -> {out}")
    return EXIT_OK


def _load_model(path: str):
    p = _need(Path(path), "checkpoint")
    try:
        return load(p)
    except CheckpointError as exc:
        raise MissingPrerequisite(f"unusable checkpoint {p}: {exc}") from exc


def _reduce_to_model(ds: LabeledWindowDataset, model) -> LabeledWindowDataset:
    """Reject a dataset whose channel count differs from the checkpoint's input."""
    want = model.spec.input_channels
    if ds.windows.shape[1] == want:
        return ds
    raise MissingPrerequisite(f"checkpoint expects {want} channels but the dataset has "
                              f"{ds.windows.shape[1]}; pass the matching --features file")


def _apply_features(ds: LabeledWindowDataset, features: str | None) -> LabeledWindowDataset:
    if not features:
        return ds
    sel = json.loads(_need(Path(features), "feature list").read_text(encoding="utf-8"))
    return ds.select_channels([ds.channel_names.index(n) for n in sel["features"]])


def cmd_evaluate(args, cfg: dict) -> int:
    model = _load_model(args.checkpoint)
    test = load_dataset(_need(Path(args.data) / "test.json", "test split").with_suffix(""))
    test = _reduce_to_model(_apply_features(test, args.features), model)
    out = _outdir(args.out)
    report = evaluate(model, test)
    _report_files(out, report)
    write_provenance(out, "evaluate", {"checkpoint": args.checkpoint, "data": args.data}, {},
                     [args.checkpoint, args.data])
    print(f"test accuracy {report.accuracy:.4f}, macro F1 {report.f1:.4f}")
    return EXIT_OK


def _choices(value: str, valid: Sequence[str], what: str) -> list[str]:
    items = list(valid) if value == "all" else [v.strip() for v in value.split(",") if v.strip()]
    bad = [v for v in items if v not in valid]
    if bad or not items:
        raise UsageError(f"unknown {what} {bad or value!r}; valid values: {', '.join(valid)} (or all)")
    return items


def cmd_explain(args, cfg: dict) -> int:
    sec = _merge(cfg.get("xai", {}), methods=args.methods, baselines=args.baselines, samples=args.samples,
                 steps=args.steps, n_samples=args.n_samples, k=args.k, select_top=args.select_top)
    methods = _choices(sec.get("methods", "all"), METHODS, "method")
    kinds = _choices(sec.get("baselines", "all"), BASELINE_KINDS, "baseline")
    model = _load_model(args.checkpoint)
    data = Path(args.data)
    train_ds = _reduce_to_model(_apply_features(load_dataset(_need(data / "train.json", "train split").with_suffix("")),
                                                args.features), model)
    test = _reduce_to_model(_apply_features(load_dataset(_need(data / "test.json", "test split").with_suffix("")),
                                            args.features), model)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    rng = np.random.default_rng(seed)
    n = min(int(sec.get("samples", 20)), len(test))
    idx = np.sort(rng.choice(len(test), n, replace=False))
    x, labels = test.windows[idx], test.labels[idx]
    steps, n_samples, k = int(sec.get("steps", 50)), int(sec.get("n_samples", 20)), int(sec.get("k", 10))
    out = _outdir(args.out)
    timing: dict[str, dict[str, float]] = {}
    reports = {}
    for kind in kinds:
        ref = make_baseline(kind, train_ds.windows, k=k, seed=seed)
        for m in methods:
            start = time.perf_counter()
            attr = explain(m, model, x, ref if kind == "random" and m in ("gradshap", "dlshap") else
                           (ref[0] if kind == "random" else ref), labels, steps=steps, n_samples=n_samples,
                           seed=seed, baseline_name=kind)
            timing.setdefault(kind, {})[m] = time.perf_counter() - start
            rep = pcfi(attr.values, labels, model.spec.num_classes, test.channel_names,
                       test.class_names, m, kind)
            reports[(m, kind)] = rep
            _write(out / f"gfi_{m}_{kind}.csv", gfi_csv(rep))
            _write(out / f"pcfi_{m}_{kind}.csv", pcfi_csv(rep))
        single = ref[0] if kind == "random" else ref
        fis = feature_interactions(model, x, single, labels, test.channel_names)
        _write(out / f"fis_{kind}.csv", interaction_csv(fis))
        _write(out / f"fis_{kind}_raw.csv", interaction_csv(fis, "raw"))
        _write(out / f"fis_{kind}.svg", heatmap_svg(fis.normalized, fis.names, f"normalized interactions ({kind})"))
        _write(out / f"fis_{kind}_flagged.json", json.dumps(
            [[fis.names[i], fis.names[j], float(fis.raw[i, j])] for i, j in fis.flagged], indent=2) + "\n")
    rows = {kind: {m: _timed(t) for m, t in row.items()} for kind, row in timing.items()}
    if deterministic():
        _write(out / "timing.csv", "Model," + ",".join(METHOD_TITLES[m] for m in methods) + "\n")
    else:
        _write(out / "timing.csv", timing_csv({f"{model.spec.name}/{kd}": r for kd, r in timing.items()}, methods))
    _write(out / "timing.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    top = sec.get("select_top")
    if top:
        m, kind = methods[0], kinds[0]
        sel = select_top_k(reports[(m, kind)], int(top))
        _write(out / f"top{top}.json", json.dumps({"features": sel.names, "indices": sel.indices,
                                                   "method": m, "baseline": kind,
                                                   "boundary_tie": sel.boundary_tie}, indent=2,
                                                  ensure_ascii=False) + "\n")
        _write(out / f"top{top}.csv", gfi_csv(reports[(m, kind)], int(top)))
    full = {"methods": methods, "baselines": kinds, "samples": n, "steps": steps, "n_samples": n_samples,
            "k": k, "select_top": top, "checkpoint": args.checkpoint}
    write_provenance(out, "explain", full, {"root": seed, "sample_seed_rule": "root + sample index"},
                     [args.checkpoint, args.data])
    print(f"{len(methods) * len(kinds)} importance variants written to {out}")
    return EXIT_OK


def cmd_gridsearch(args, cfg: dict) -> int:
    src = _need(Path(args.data) / "manifest.json", "dataset manifest").parent
    recs, man = load_dataset_dir(src)
    task = man.get("task") or "fault_type"
    space = dict(SEARCH_SPACE)
    space.update(cfg.get("space", {}))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    epochs = int(args.epochs or cfg.get("epochs", 2))
    budget = int(args.budget if args.budget is not None else cfg.get("budget", 4))

    def objective(point: dict) -> SearchResult:
        try:
            splits = pipeline(recs, task, point["window"], point["step"], point["resampling"], seed=seed)
            spec = search_spec(point)
            model = build_model(spec, seed=seed)
            res = train(model, splits.train, splits.val,
                        TrainConfig(epochs=epochs, patience=epochs, batch_size=128, seed=seed))
            acc = res.history[res.best_epoch].val_acc
            return SearchResult(point, acc, spec_params(spec), {"val_loss": res.best_val_loss})
        except ValueError as exc:
            return SearchResult(point, -1.0, 0, {"error": str(exc)})

    ranked = grid_search(space, budget, objective, seed)
    out = _outdir(args.out)
    rows = [{"rank": i + 1, "val_accuracy": r.val_accuracy, "params": r.params, "config": r.config,
             "metrics": r.metrics} for i, r in enumerate(ranked)]
    _write(out / "ranking.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    write_provenance(out, "gridsearch", {"space": space, "budget": budget, "epochs": epochs}, {"root": seed},
                     [str(src)])
    for row in rows[:5]:
        print(f"{row['rank']}: acc {row['val_accuracy']:.4f} params {row['params']} {row['config']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xfdd", description="Fault diagnosis with explainable hybrid CNN-GRU classifiers.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, data=True, out=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--data", required=True, help="input directory")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    d = sub.add_parser("datagen", help="simulate labelled recordings")
    common(d, data=False)
    d.add_argument("--task", help="fault-type or fault-location")
    d.add_argument("--budget", type=int, help="windows per class")
    d.add_argument("--window", type=int)
    d.add_argument("--step", type=int)
    d.add_argument("--imbalance", type=float)

    pp = sub.add_parser("preprocess", help="window, split, standardize, resample")
    common(pp)
    pp.add_argument("--window", type=int)
    pp.add_argument("--step", type=int)
    pp.add_argument("--resampling", choices=("none", "undersample", "smote"))
    pp.add_argument("--denoise", action="store_true")

    t = sub.add_parser("train", help="train and evaluate a model")
    common(t)
    t.add_argument("--model", choices=MODELS)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--sampling", choices=("none", "class_weights"))
    t.add_argument("--channel-divisor", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--features", help="feature list written by explain --select-top")

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--features")

    x = sub.add_parser("explain", help="attributions, importance reports and timing")
    common(x)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--methods", help=f"comma list of {', '.join(METHODS)} or all")
    x.add_argument("--baselines", help=f"comma list of {', '.join(BASELINE_KINDS)} or all")
    x.add_argument("--samples", type=int, help="number of test windows to explain")
    x.add_argument("--steps", type=int, help="integrated-gradients steps")
    x.add_argument("--n-samples", type=int, help="gradient SHAP draws")
    x.add_argument("--k", type=int, help="random baselines for the SHAP methods")
    x.add_argument("--select-top", type=int)
    x.add_argument("--features")

    g = sub.add_parser("gridsearch", help="budget-capped grid search")
    common(g)
    g.add_argument("--budget", type=int)
    g.add_argument("--epochs", type=int)
    return p


COMMANDS = {"datagen": cmd_datagen, "preprocess": cmd_preprocess, "train": cmd_train,
            "evaluate": cmd_evaluate, "explain": cmd_explain, "gridsearch": cmd_gridsearch}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(getattr(args, "config", None))
        with thread_limit():
            return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except MissingPrerequisite as exc:
        print(f"xfdd: missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"xfdd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NAN
    except OSError as exc:
        print(f"xfdd: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
