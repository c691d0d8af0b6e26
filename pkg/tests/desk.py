"""Desk-scale end-to-end run shared by the acceptance suite.

Synthetic fault-type data (7 classes, 1,000 windows per class, W=50, S=25), the
hybrid model scaled down (conv channels / 4, hidden 64), the RNN and GRU baselines
on identical splits, and a retrain on the top-10 GFI channels.
"""

import time

import numpy as np

from xfdd.datagen import DatagenConfig, generate_dataset
from xfdd.nn import baseline_spec, build_model, ftcm_spec
from xfdd.preprocess import pipeline
from xfdd.train import TrainConfig, evaluate, train
from xfdd.xai import gfi, integrated_gradients, make_baseline, select_top_k

WINDOW, STEP, PER_CLASS = 50, 25, 1000
EPOCHS = 40
SEED = 0


def _fit(spec, splits):
    model = build_model(spec, seed=SEED)
    res = train(model, splits.train, splits.val, TrainConfig(batch_size=128, epochs=EPOCHS, patience=8, seed=SEED))
    return model, res, evaluate(model, splits.test, train_time=res.train_time)


def run_desk(log=print):
    start = time.perf_counter()
    recs = generate_dataset("fault_type", PER_CLASS, DatagenConfig(window=WINDOW, step=STEP), seed=SEED)
    splits = pipeline(recs, "fault_type", WINDOW, STEP, seed=SEED)
    out = {"splits": splits, "class_counts": (splits.train.class_counts() + splits.val.class_counts()
                                              + splits.test.class_counts()).tolist()}

    spec = ftcm_spec(window=WINDOW, channel_divisor=4, hidden=64)
    out["hybrid"] = _fit(spec, splits)
    out["hybrid_wall"] = time.perf_counter() - start
    log(f"hybrid: acc {out['hybrid'][2].accuracy:.4f} in {out['hybrid_wall']:.0f} s")
    for kind in ("rnn", "gru"):
        out[kind] = _fit(baseline_spec(kind, hidden=64, window=WINDOW), splits)
        log(f"{kind}: acc {out[kind][2].accuracy:.4f} train {out[kind][1].train_time:.0f} s")

    # global importance from IG on 20 training windows per class, zero baseline
    model = out["hybrid"][0]
    rng = np.random.default_rng(SEED)
    idx = np.concatenate([rng.choice(np.flatnonzero(splits.train.labels == c), 20, replace=False) for c in range(7)])
    x, y = splits.train.windows[idx], splits.train.labels[idx]
    attr = integrated_gradients(model, x, make_baseline("zero", x), y, steps=50, baseline_name="zero")
    report = gfi(attr.values, splits.train.channel_names, "ig", "zero")
    sel = select_top_k(report, 10, spec=spec)
    reduced = type(splits)(*(s.select_channels(sel.indices) for s in (splits.train, splits.val, splits.test)))
    out["gfi"], out["selection"] = report, sel
    out["reduced"] = _fit(sel.spec, reduced)
    out["reduced_splits"] = reduced
    log(f"top-10: acc {out['reduced'][2].accuracy:.4f} train {out['reduced'][1].train_time:.0f} s; "
        f"features {sel.names}")
    out["total_wall"] = time.perf_counter() - start
    return out


if __name__ == "__main__":
    r = run_desk()
    for k in ("hybrid", "rnn", "gru", "reduced"):
        m, res, rep = r[k]
        print(k, rep.accuracy, res.train_time, len(res.history), res.best_epoch)
    print("total", r["total_wall"])
