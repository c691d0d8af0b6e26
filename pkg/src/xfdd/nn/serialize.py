"""Checkpoint format.

One JSON manifest line (layer kinds, tensor names and shapes, hyperparameters,
precision, seed) terminated by ``\\n``, followed by every tensor's raw
little-endian bytes concatenated in manifest order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import Model, ModelSpec, build_model

FORMAT = "xfdd-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _little(dtype: np.dtype) -> str:
    return np.dtype(dtype).newbyteorder("<").str


def manifest(model: Model) -> dict:
    layers = []
    for row, layer in zip(model.summary, model.layers):
        tensors = [{"name": k, "shape": list(p.shape), "role": "param"} for k, p in layer.params.items()]
        tensors += [{"name": k, "shape": list(b.shape), "role": "buffer"} for k, b in layer.buffers.items()]
        layers.append({"name": row.name, "kind": layer.kind, "config": layer.config(), "tensors": tensors})
    return {
        "format": FORMAT,
        "version": VERSION,
        "precision": _little(model.dtype),
        "seed": model.seed,
        "spec": model.spec.to_dict(),
        "layers": layers,
    }


def _arrays(model: Model):
    for layer in model.layers:
        yield from (p.data for p in layer.params.values())
        yield from layer.buffers.values()


def serialize(model: Model) -> bytes:
    head = json.dumps(manifest(model), sort_keys=True, separators=(",", ":")).encode() + b"\n"
    dt = _little(model.dtype)
    return head + b"".join(np.ascontiguousarray(a, dtype=dt).tobytes() for a in _arrays(model))


def _diff(expected: dict, found: dict) -> list[str]:
    lines = []
    for k in ("format", "version"):
        if expected[k] != found.get(k):
            lines.append(f"{k}: expected {expected[k]!r}, found {found.get(k)!r}")
    exp_l, got_l = expected["layers"], found.get("layers", [])
    if len(exp_l) != len(got_l):
        lines.append(f"layer count: expected {len(exp_l)}, found {len(got_l)}")
    for e, g in zip(exp_l, got_l):
        if e["kind"] != g.get("kind"):
            lines.append(f"{e['name']}: kind {e['kind']} != {g.get('kind')}")
        for te, tg in zip(e["tensors"], g.get("tensors", [])):
            if te["name"] != tg.get("name") or te["shape"] != tg.get("shape"):
                lines.append(f"{e['name']}.{te['name']}: shape {te['shape']} != "
                             f"{tg.get('name')} {tg.get('shape')}")
    return lines


def deserialize(blob: bytes) -> Model:
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing manifest terminator")
    try:
        found = json.loads(blob[:nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from exc
    if found.get("format") != FORMAT or found.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint: format={found.get('format')!r} "
                              f"version={found.get('version')!r} (expected {FORMAT!r} v{VERSION})")
    dtype = np.dtype(found["precision"])
    model = build_model(ModelSpec.from_dict(found["spec"]), seed=found.get("seed") or 0,
                        dtype=dtype.newbyteorder("="))
    model.seed = found.get("seed")
    problems = _diff(manifest(model), found)
    if problems:
        raise CheckpointError("manifest does not match the rebuilt model:\n  " + "\n  ".join(problems))
    arrays = list(_arrays(model))
    need = sum(a.size for a in arrays) * dtype.itemsize
    payload = memoryview(blob)[nl + 1 :]
    if len(payload) != need:
        missing = need - len(payload)
        what = f"missing {missing} bytes" if missing > 0 else f"{-missing} unexpected trailing bytes"
        raise CheckpointError(f"payload is {len(payload)} bytes, expected {need}: {what}")
    offset = 0
    for a in arrays:
        nbytes = a.size * dtype.itemsize
        a[...] = np.frombuffer(payload[offset : offset + nbytes], dtype=dtype).reshape(a.shape)
        offset += nbytes
    return model


def save(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(serialize(model))


def load(path: str | Path) -> Model:
    return deserialize(Path(path).read_bytes())
