"""Synthetic driving telemetry with injectable sensor faults.

A small longitudinal-vehicle and engine-air-path model produces the 24
recorded channels. Faults are applied afterwards, on the recorded signals, so
everything outside the fault interval and target channels is untouched.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

FEATURES = [
    "a_x_Vehicle_Ref[m/s²]",
    "v_Vehicle[km/h]",
    "v_Vehicle_Ref[km/h]",
    "FuelTank[0,1]",
    "P_Engine[kW]",
    "Pos_Throttle[%]",
    "T_Out_Comp[°C]",
    "T_Out_InterCooler[°C]",
    "T_Rail[°C]",
    "Trq_MeanInd_Engine_Mod[Nm]",
    "lambda",
    "lambda_bCat[]",
    "mdot_Out_EGR[kg/h]",
    "mdot_Out_EGR_Air[kg/h]",
    "mdot_Out_Throttle[kg/h]",
    "mdot_Turb[kg/h]",
    "omega_TC[rpm]",
    "p_InMan[Pa]",
    "p_In_Throttle[Pa]",
    "p_Out_Throttle[Pa]",
    "q_Mean_Inj[mg/cycle]",
    "q_Mean_Inj_Alt[mm³/cycle]",
    "q_PresCtrlValve[mm³/s]",
    "q_RailLeak[mm³/s]",
]
CHANNEL_INDEX = {name: i for i, name in enumerate(FEATURES)}

SCENARIOS = ("highway", "lane_change", "city")
FAULT_KINDS = ("noise", "gain", "offset")

TYPE_CLASSES = ["H", "F1", "F2", "F3", "F1F2", "F1F3", "F2F3"]
LOCATION_CLASSES = ["H", "L1", "L2", "L3", "L1L2", "L1L3", "L2L3"]
TASKS = {"fault_type": TYPE_CLASSES, "fault_location": LOCATION_CLASSES}

# the feature set has no pedal, steering or crank-speed channel; these stand in for them.
PEDAL_CHANNEL = "Pos_Throttle[%]"
STEERING_CHANNEL = "a_x_Vehicle_Ref[m/s²]"
ENGINE_SPEED_CHANNEL = "omega_TC[rpm]"


@dataclass
class FaultSpec:
    kind: str
    channels: tuple[str, ...]
    magnitude: float
    start: float = 0.0
    end: float | None = None  # None: until the end of the recording

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}; expected one of {FAULT_KINDS}")
        self.channels = tuple(self.channels)


@dataclass
class Recording:
    data: np.ndarray  # [24, N], rows ordered as FEATURES
    rate: float
    seed: int | None = None
    scenario: str | None = None
    label: str = "H"
    faults: list[FaultSpec] = field(default_factory=list)
    aux: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def names(self) -> list[str]:
        return list(FEATURES)

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.rate

    def channel(self, name: str) -> np.ndarray:
        return self.data[CHANNEL_INDEX[name]]


# ---------------------------------------------------------------------------
# plant model

_MASS = 1500.0
_G = 9.81
_C_RR = 0.012
_CDA = 0.7
_RHO = 1.2
_WHEEL_R = 0.31
_GEARS = np.array([3.6, 2.1, 1.4, 1.0, 0.8, 0.65]) * 3.4
_DISPLACEMENT = 3.0e-3  # m^3
_CYLINDERS = 6


def _speed_targets(scenario: str, n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant target speed [km/h]."""
    if scenario == "highway":
        levels, hold = (90.0, 135.0), (20.0, 45.0)
    elif scenario == "lane_change":
        levels, hold = (75.0, 115.0), (6.0, 15.0)
    elif scenario == "city":
        levels, hold = (0.0, 55.0), (8.0, 20.0)
    else:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    out = np.empty(n)
    k = 0
    while k < n:
        span = max(1, int(rng.uniform(*hold) / dt))
        level = rng.uniform(*levels)
        if scenario == "city" and rng.random() < 0.3:
            level = 0.0
        out[k : k + span] = level
        k += span
    return out


def _lag(x: np.ndarray, tau: float, dt: float, x0: float | None = None) -> np.ndarray:
    """First-order low-pass y' = (x - y) / tau."""
    if len(x) == 0:
        return x.copy()
    a = dt / (tau + dt)
    y = np.empty_like(x)
    acc = x[0] if x0 is None else x0
    for i, v in enumerate(x):
        acc += a * (v - acc)
        y[i] = acc
    return y


def simulate_drive(scenario: str, duration: float, rate: float = 10.0, seed: int = 0,
                   measurement_noise: float = 0.01) -> Recording:
    """Simulate a healthy drive; deterministic in (scenario, duration, rate, seed)."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if duration < 0 or rate <= 0:
        raise ValueError("duration must be >= 0 and rate > 0")
    n = int(round(duration * rate))
    rng = np.random.default_rng(seed)
    dt = 1.0 / rate
    if n == 0:
        return Recording(np.zeros((len(FEATURES), 0)), rate, seed, scenario,
                         aux={"a_real": np.zeros(0), "engine_speed": np.zeros(0)})

    v_ref = _lag(_speed_targets(scenario, n, dt, rng), 3.0, dt)
    v0 = float(v_ref[0])
    v = np.empty(n)
    a_dem = np.empty(n)
    a_real = np.empty(n)
    vk, ak = v0, 0.0
    for k in range(n):
        v[k] = vk
        dem = min(2.0, max(-3.0, 0.35 * (v_ref[k] - vk) / 3.6 + rng.normal(0, 0.05)))
        a_dem[k] = dem
        ak += dt / 0.5 * (dem - ak)
        if vk + ak * dt * 3.6 < 0:  # cannot roll backwards
            ak = -vk / (dt * 3.6)
        a_real[k] = ak
        vk = vk + ak * dt * 3.6

    vs = v / 3.6
    force = _MASS * a_real + _MASS * _G * _C_RR * (vs > 0.1) + 0.5 * _RHO * _CDA * vs**2
    p_engine = np.maximum(force * vs, 0.0) / 0.9 / 1000.0 + 2.0  # kW, idle load 2 kW

    wheel_rpm = vs / _WHEEL_R * 60 / (2 * math.pi)
    cand = wheel_rpm[:, None] * _GEARS[None, :]
    ok = cand >= 1500
    gear = np.where(ok.any(axis=1), _GEARS.size - 1 - np.argmax(ok[:, ::-1], axis=1), 0)
    n_eng = np.maximum(cand[np.arange(n), gear], 800.0)
    n_eng = _lag(n_eng, 0.3, dt)

    trq = np.clip(p_engine * 1000 / (n_eng * 2 * math.pi / 60), 5.0, 450.0)
    throttle = np.clip(100 * trq / 420 + 3.0, 2.0, 100.0)
    omega_tc = _lag(30000 + 150000 * (p_engine / 160.0) ** 0.8, 1.0, dt)
    boost = 60000 * (omega_tc - 30000) / 150000
    p_in_thr = 101325 + boost
    p_inman = p_in_thr * (0.25 + 0.7 * throttle / 100)
    p_out_thr = p_inman * 1.02
    rho_man = p_inman / (287.0 * 315.0)
    mdot_air = 0.9 * _DISPLACEMENT * n_eng / 120 * rho_man * 3600  # kg/h
    mdot_egr = 0.08 * mdot_air * (1 - throttle / 100)
    mdot_egr_air = 0.45 * mdot_egr
    t = np.arange(n) * dt
    lam = 1.0 + 0.02 * np.sin(2 * math.pi * t / 1.3) + 0.05 * (a_dem < -0.8)
    lam_cat = _lag(lam, 2.0, dt)
    fuel = mdot_air / (14.7 * lam)  # kg/h
    q_inj = fuel * 1e6 / 3600 / (n_eng / 120 * _CYLINDERS)  # mg per cycle
    q_inj_alt = q_inj / 0.745
    mdot_turb = mdot_air + fuel
    t_comp = _lag(25 + 120 * (omega_tc - 30000) / 150000, 5.0, dt)
    t_ic = _lag(25 + 0.3 * (t_comp - 25), 8.0, dt)
    t_rail = _lag(40 + 15 * p_engine / 160, 20.0, dt)
    q_pcv = 200 + 0.8 * q_inj * n_eng / 60
    q_leak = 20 + 0.02 * q_pcv
    fuel_tank = 0.8 - np.cumsum(fuel) * dt / 3600 / 60.0

    rows = {
        "a_x_Vehicle_Ref[m/s²]": a_dem,
        "v_Vehicle[km/h]": v,
        "v_Vehicle_Ref[km/h]": v_ref,
        "FuelTank[0,1]": fuel_tank,
        "P_Engine[kW]": p_engine,
        "Pos_Throttle[%]": throttle,
        "T_Out_Comp[°C]": t_comp,
        "T_Out_InterCooler[°C]": t_ic,
        "T_Rail[°C]": t_rail,
        "Trq_MeanInd_Engine_Mod[Nm]": trq,
        "lambda": lam,
        "lambda_bCat[]": lam_cat,
        "mdot_Out_EGR[kg/h]": mdot_egr,
        "mdot_Out_EGR_Air[kg/h]": mdot_egr_air,
        "mdot_Out_Throttle[kg/h]": mdot_air,
        "mdot_Turb[kg/h]": mdot_turb,
        "omega_TC[rpm]": omega_tc,
        "p_InMan[Pa]": p_inman,
        "p_In_Throttle[Pa]": p_in_thr,
        "p_Out_Throttle[Pa]": p_out_thr,
        "q_Mean_Inj[mg/cycle]": q_inj,
        "q_Mean_Inj_Alt[mm³/cycle]": q_inj_alt,
        "q_PresCtrlValve[mm³/s]": q_pcv,
        "q_RailLeak[mm³/s]": q_leak,
    }
    data = np.stack([rows[name] for name in FEATURES])
    # sensor noise proportional to each channel's variability (a magnitude
    # scale would swamp slow channels like the tank level); the two speed
    # channels stay exact so the kinematic relation remains checkable
    scale = data.std(axis=1, keepdims=True) + 1e-6 * (np.abs(data).mean(axis=1, keepdims=True) + 1)
    noise = rng.normal(0, measurement_noise, size=data.shape) * scale
    noise[[CHANNEL_INDEX["v_Vehicle[km/h]"], CHANNEL_INDEX["v_Vehicle_Ref[km/h]"]]] = 0
    data = data + noise
    return Recording(data, rate, seed, scenario, aux={"a_real": a_real, "engine_speed": n_eng})


# ---------------------------------------------------------------------------
# faults

def _interval(rec: Recording, fault: FaultSpec) -> tuple[int, int]:
    end = rec.duration if fault.end is None else fault.end
    if fault.start < 0 or end > rec.duration + 1e-9 or fault.start > end:
        raise ValueError(f"fault interval [{fault.start}, {end}] lies outside the recording "
                         f"[0, {rec.duration}]")
    return int(round(fault.start * rec.rate)), int(round(end * rec.rate))


def snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    return 10 * math.log10(np.mean(signal**2) / np.mean(noise**2))


def inject_fault(rec: Recording, fault: FaultSpec, seed: int = 0) -> Recording:
    """Return a copy of ``rec`` with ``fault`` applied on its interval and channels.

    noise: zero-mean Gaussian scaled so the in-interval SNR equals ``magnitude`` dB;
    gain: multiply by ``magnitude``; offset: add ``magnitude``.
    """
    unknown = [c for c in fault.channels if c not in CHANNEL_INDEX]
    if unknown:
        raise ValueError(f"unknown channel(s) {unknown}")
    i0, i1 = _interval(rec, fault)
    data = rec.data.copy()
    rng = np.random.default_rng(seed)
    for name in fault.channels:
        row = data[CHANNEL_INDEX[name]]
        seg = row[i0:i1]
        if fault.kind == "gain":
            row[i0:i1] = seg * fault.magnitude
        elif fault.kind == "offset":
            row[i0:i1] = seg + fault.magnitude
        elif seg.size:
            eta = rng.standard_normal(seg.size)
            p_sig = np.mean(seg**2)
            p_eta = np.mean(eta**2)
            eta *= math.sqrt(p_sig / (p_eta * 10 ** (fault.magnitude / 10)))
            row[i0:i1] = seg + eta
    return replace(rec, data=data, faults=[*rec.faults, fault], aux=dict(rec.aux))


# ---------------------------------------------------------------------------
# datasets

@dataclass
class DatagenConfig:
    window: int = 50
    step: int = 25
    windows_per_recording: int = 40
    rate: float = 10.0
    imbalance: float = 1.0  # smallest class budget / largest
    type_channel: str = ENGINE_SPEED_CHANNEL
    location_channels: tuple[str, str, str] = (PEDAL_CHANNEL, STEERING_CHANNEL, ENGINE_SPEED_CHANNEL)
    location_kind: str = "noise"
    noise_snr_db: float = 15.0
    gain: float = 1.8
    offset: float = -20000.0
    location_magnitudes: dict = field(default_factory=lambda: {"noise": 15.0, "gain": 1.8, "offset": 10.0})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["location_channels"] = list(self.location_channels)
        return d


def class_faults(task: str, label: str, cfg: DatagenConfig) -> list[FaultSpec]:
    """The fault set encoding ``label``; the label is a pure function of this set."""
    if task == "fault_type":
        mags = {"noise": cfg.noise_snr_db, "gain": cfg.gain, "offset": cfg.offset}
        kinds = {"F1": "noise", "F2": "gain", "F3": "offset"}
        codes = [label[i : i + 2] for i in range(0, len(label), 2)] if label != "H" else []
        # noise first so its SNR refers to the true signal, then gain, then offset
        order = {"noise": 0, "gain": 1, "offset": 2}
        faults = [FaultSpec(kinds[c], (cfg.type_channel,), mags[kinds[c]]) for c in codes]
        return sorted(faults, key=lambda f: order[f.kind])
    if task == "fault_location":
        where = dict(zip(("L1", "L2", "L3"), cfg.location_channels))
        codes = [label[i : i + 2] for i in range(0, len(label), 2)] if label != "H" else []
        mag = cfg.location_magnitudes[cfg.location_kind]
        return [FaultSpec(cfg.location_kind, (where[c],), mag) for c in codes]
    raise ValueError(f"unknown task {task!r}; expected one of {sorted(TASKS)}")


def label_of(task: str, faults: Sequence[FaultSpec], cfg: DatagenConfig) -> str:
    if task == "fault_type":
        codes = {"noise": "F1", "gain": "F2", "offset": "F3"}
        parts = sorted(codes[f.kind] for f in faults)
    else:
        where = {ch: code for code, ch in zip(("L1", "L2", "L3"), cfg.location_channels)}
        parts = sorted(where[c] for f in faults for c in f.channels)
    return "".join(parts) or "H"


def class_budgets(budget: int, n_classes: int, imbalance: float) -> list[int]:
    if budget <= 0:
        raise ValueError("per-class budget must be positive")
    if not 0 < imbalance <= 1:
        raise ValueError("imbalance must lie in (0, 1]")
    if n_classes == 1:
        return [budget]
    return [max(1, int(round(budget * (1 - (1 - imbalance) * c / (n_classes - 1)))))
            for c in range(n_classes)]


def generate_dataset(task: str, budget: int, config: DatagenConfig | None = None,
                     seed: int = 0) -> list[Recording]:
    """Labelled recordings sized so that windowing yields exactly each class's budget.

    Recording ``i`` is simulated with seed ``seed + i`` and scenarios cycle
    through highway, lane change and city.
    """
    cfg = config or DatagenConfig()
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(TASKS)}")
    classes = TASKS[task]
    recordings = []
    index = 0
    for label, count in zip(classes, class_budgets(budget, len(classes), cfg.imbalance)):
        remaining = count
        while remaining > 0:
            k = min(cfg.windows_per_recording, remaining)
            n = cfg.window + cfg.step * (k - 1)
            rec = simulate_drive(SCENARIOS[index % len(SCENARIOS)], n / cfg.rate, cfg.rate, seed + index)
            for j, fault in enumerate(class_faults(task, label, cfg)):
                rec = inject_fault(rec, fault, seed=(seed + index) * 7 + j)
            rec.label = label
            recordings.append(rec)
            remaining -= k
            index += 1
    return recordings


# ---------------------------------------------------------------------------
# CSV

def _fmt(x: float) -> str:
    return repr(float(x))


def to_csv_text(rec: Recording) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*FEATURES, "label"])
    for col in rec.data.T:
        w.writerow([*map(_fmt, col), rec.label])
    return buf.getvalue()


def from_csv_text(text: str, rate: float = 10.0) -> Recording:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty CSV")
    header = rows[0]
    expected = [*FEATURES, "label"]
    for name in header:
        if name not in expected:
            raise ValueError(f"unknown column {name!r}")
    if header != expected:
        missing = [n for n in expected if n not in header]
        raise ValueError(f"header mismatch; missing or misordered columns: {missing or header}")
    body = rows[1:]
    data = np.array([[float(v) for v in r[:-1]] for r in body]).T.reshape(len(FEATURES), len(body))
    labels = {r[-1] for r in body}
    if len(labels) > 1:
        raise ValueError(f"recording carries several labels: {sorted(labels)}")
    return Recording(data, rate, label=labels.pop() if labels else "H")


def save_csv(recordings: Sequence[Recording], out_dir: str | Path, task: str | None = None,
             extra: dict | None = None) -> list[Path]:
    """One UTF-8 CSV per recording plus ``manifest.json`` describing the set."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, rec in enumerate(recordings):
        p = out / f"rec_{i:04d}_{rec.label}.csv"
        p.write_text(to_csv_text(rec), encoding="utf-8", newline="")
        paths.append(p)
    counts: dict[str, int] = {}
    for rec in recordings:
        counts[rec.label] = counts.get(rec.label, 0) + 1
    man = {
        "task": task,
        "recordings": [
            {"file": p.name, "label": r.label, "seed": r.seed, "scenario": r.scenario,
             "rate": r.rate, "samples": r.n_samples,
             "faults": [asdict(f) for f in r.faults]}
            for p, r in zip(paths, recordings)
        ],
        "recording_counts": counts,
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(man, indent=2, ensure_ascii=False), encoding="utf-8")
    return paths


def load_csv(paths: Sequence[str | Path], rate: float = 10.0) -> list[Recording]:
    return [from_csv_text(Path(p).read_text(encoding="utf-8"), rate) for p in paths]


def load_dataset_dir(path: str | Path) -> tuple[list[Recording], dict]:
    root = Path(path)
    man = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    recs = []
    for entry in man["recordings"]:
        rec = from_csv_text((root / entry["file"]).read_text(encoding="utf-8"), entry.get("rate", 10.0))
        rec.seed, rec.scenario = entry.get("seed"), entry.get("scenario")
        recs.append(rec)
    return recs, man
