import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xfdd.datagen import (
    CHANNEL_INDEX,
    FEATURES,
    LOCATION_CLASSES,
    SCENARIOS,
    TYPE_CLASSES,
    DatagenConfig,
    FaultSpec,
    class_budgets,
    class_faults,
    from_csv_text,
    generate_dataset,
    inject_fault,
    label_of,
    load_csv,
    load_dataset_dir,
    save_csv,
    simulate_drive,
    snr_db,
    to_csv_text,
)
from xfdd.preprocess import window_recordings

TABLE3 = [
    "a_x_Vehicle_Ref[m/s²]", "v_Vehicle[km/h]", "v_Vehicle_Ref[km/h]", "FuelTank[0,1]",
    "P_Engine[kW]", "Pos_Throttle[%]", "T_Out_Comp[°C]", "T_Out_InterCooler[°C]", "T_Rail[°C]",
    "Trq_MeanInd_Engine_Mod[Nm]", "lambda", "lambda_bCat[]", "mdot_Out_EGR[kg/h]",
    "mdot_Out_EGR_Air[kg/h]", "mdot_Out_Throttle[kg/h]", "mdot_Turb[kg/h]", "omega_TC[rpm]",
    "p_InMan[Pa]", "p_In_Throttle[Pa]", "p_Out_Throttle[Pa]", "q_Mean_Inj[mg/cycle]",
    "q_Mean_Inj_Alt[mm³/cycle]", "q_PresCtrlValve[mm³/s]", "q_RailLeak[mm³/s]",
]

ENGINE = "omega_TC[rpm]"


@pytest.fixture(scope="module")
def drive():
    return simulate_drive("city", 60.0, 10.0, seed=3)


def test_channel_names_match_feature_table(drive):
    assert FEATURES == TABLE3
    assert drive.names == TABLE3 and drive.data.shape == (24, 600)


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_simulation_is_deterministic_and_finite(scenario):
    a = simulate_drive(scenario, 30.0, 10.0, seed=11)
    b = simulate_drive(scenario, 30.0, 10.0, seed=11)
    assert a.data.tobytes() == b.data.tobytes()
    assert np.isfinite(a.data).all()
    assert not np.array_equal(a.data, simulate_drive(scenario, 30.0, 10.0, seed=12).data)


def test_unknown_scenario_rejected():
    with pytest.raises(ValueError, match="scenario"):
        simulate_drive("rally", 10.0)


def test_zero_duration_is_empty():
    rec = simulate_drive("highway", 0.0)
    assert rec.data.shape == (24, 0) and rec.names == TABLE3


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_speed_is_integral_of_acceleration(scenario):
    rec = simulate_drive(scenario, 120.0, 10.0, seed=5)
    v = rec.channel("v_Vehicle[km/h]")
    dt = 1 / rec.rate
    rebuilt = v[0] + np.concatenate([[0.0], np.cumsum(rec.aux["a_real"][:-1] * dt * 3.6)])
    assert np.abs(rebuilt - v).max() <= 1e-3 * max(np.abs(v).max(), 1.0)


def test_channels_are_coupled(drive):
    # throttle follows torque demand; power follows speed and torque
    r = np.corrcoef(drive.channel("Trq_MeanInd_Engine_Mod[Nm]"), drive.channel("Pos_Throttle[%]"))[0, 1]
    assert r > 0.95
    r = np.corrcoef(drive.channel("P_Engine[kW]"), drive.channel("mdot_Out_Throttle[kg/h]"))[0, 1]
    assert r > 0.5


# fault injection ------------------------------------------------------------

def test_unit_gain_leaves_recording_unchanged(drive):
    out = inject_fault(drive, FaultSpec("gain", (ENGINE,), 1.0))
    assert out.data.tobytes() == drive.data.tobytes()


def test_offset_inside_interval_only(drive):
    out = inject_fault(drive, FaultSpec("offset", (ENGINE,), 250.0, start=10.0, end=20.0))
    i = CHANNEL_INDEX[ENGINE]
    np.testing.assert_array_equal(out.data[i, 100:200], drive.data[i, 100:200] + 250.0)
    np.testing.assert_array_equal(out.data[i, :100], drive.data[i, :100])
    np.testing.assert_array_equal(out.data[i, 200:], drive.data[i, 200:])


@pytest.mark.parametrize("snr", [5.0, 20.0, 35.0])
def test_noise_hits_target_snr(drive, snr):
    out = inject_fault(drive, FaultSpec("noise", (ENGINE,), snr, start=5.0, end=45.0), seed=1)
    i = CHANNEL_INDEX[ENGINE]
    sig = drive.data[i, 50:450]
    noise = out.data[i, 50:450] - sig
    assert abs(noise.mean()) < 0.2 * noise.std()
    assert abs(snr_db(sig, noise) - snr) <= 1.0


def test_interval_outside_recording_rejected(drive):
    with pytest.raises(ValueError, match="outside"):
        inject_fault(drive, FaultSpec("gain", (ENGINE,), 2.0, start=10.0, end=600.0))


def test_unknown_channel_and_kind_rejected(drive):
    with pytest.raises(ValueError, match="P_Engine"):
        inject_fault(drive, FaultSpec("gain", ("P_Engine",), 2.0))
    with pytest.raises(ValueError):
        FaultSpec("drift", (ENGINE,), 1.0)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["noise", "gain", "offset"]), st.integers(0, 23),
       st.integers(0, 500), st.integers(1, 100), st.integers(0, 10_000))
def test_fault_injection_is_local(kind, ch, start, length, seed):
    rec = simulate_drive("highway", 60.0, 10.0, seed=2)
    mag = {"noise": 10.0, "gain": 1.5, "offset": 3.0}[kind]
    end = min(start + length, 600)
    out = inject_fault(rec, FaultSpec(kind, (FEATURES[ch],), mag, start / 10, end / 10), seed=seed)
    mask = np.ones(rec.data.shape, bool)
    mask[ch, start:end] = False
    assert out.data[mask].tobytes() == rec.data[mask].tobytes()


def test_concurrent_fault_differs_from_singles(drive):
    cfg = DatagenConfig()
    single = {}
    for lab in ("F1", "F3"):
        rec = drive
        for j, f in enumerate(class_faults("fault_type", lab, cfg)):
            rec = inject_fault(rec, f, seed=j)
        single[lab] = rec
    both = drive
    for j, f in enumerate(class_faults("fault_type", "F1F3", cfg)):
        both = inject_fault(both, f, seed=j)
    i = CHANNEL_INDEX[cfg.type_channel]
    assert np.all(both.data[i] != single["F1"].data[i])
    assert np.all(both.data[i] != single["F3"].data[i])


@pytest.mark.parametrize("task,classes", [("fault_type", TYPE_CLASSES), ("fault_location", LOCATION_CLASSES)])
def test_labels_are_pure_functions_of_faults(task, classes):
    cfg = DatagenConfig()
    for lab in classes:
        faults = class_faults(task, lab, cfg)
        assert label_of(task, faults, cfg) == lab
        assert label_of(task, list(reversed(faults)), cfg) == lab
        if len(faults) == 2:
            if task == "fault_type":
                assert faults[0].kind != faults[1].kind
            else:
                assert faults[0].channels != faults[1].channels


# datasets -------------------------------------------------------------------

@pytest.mark.parametrize("task,classes", [("fault_type", TYPE_CLASSES), ("fault_location", LOCATION_CLASSES)])
def test_dataset_has_seven_labels_and_exact_budget(task, classes):
    cfg = DatagenConfig(window=20, step=10, windows_per_recording=30)
    recs = generate_dataset(task, 100, cfg, seed=1)
    assert sorted({r.label for r in recs}) == sorted(classes)
    ds = window_recordings(recs, task, 20, 10)
    assert ds.class_counts().tolist() == [100] * 7


def test_imbalance_budgets():
    assert class_budgets(100, 7, 1.0) == [100] * 7
    b = class_budgets(100, 7, 0.4)
    assert b[0] == 100 and b[-1] == 40 and b == sorted(b, reverse=True)
    with pytest.raises(ValueError):
        class_budgets(0, 7, 1.0)


def test_dataset_seed_rule():
    cfg = DatagenConfig(window=20, step=10, windows_per_recording=5)
    recs = generate_dataset("fault_type", 5, cfg, seed=40)
    assert [r.seed for r in recs] == list(range(40, 47))
    again = generate_dataset("fault_type", 5, cfg, seed=40)
    assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(recs, again))


# CSV ------------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    recs = generate_dataset("fault_location", 3, DatagenConfig(window=20, step=10, windows_per_recording=3), seed=2)
    paths = save_csv(recs, tmp_path, task="fault_location")
    back = load_csv(paths)
    for a, b in zip(recs, back):
        assert a.label == b.label
        np.testing.assert_allclose(b.data, a.data, rtol=1e-9, atol=0)
    header = next(csv.reader(io.StringIO(paths[0].read_text(encoding="utf-8"))))
    assert len(header) == 25 and header[-1] == "label"
    raw = paths[0].read_bytes()
    assert b"\r\n" not in raw
    man = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert man["task"] == "fault_location" and len(man["recordings"]) == len(recs)
    loaded, _ = load_dataset_dir(tmp_path)
    assert [r.seed for r in loaded] == [r.seed for r in recs]


def test_strict_header(drive):
    text = to_csv_text(drive)
    bad = text.replace("P_Engine[kW]", "P_Engine", 1)
    with pytest.raises(ValueError, match="P_Engine"):
        from_csv_text(bad)
