import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcases import KINDS, layer_grad_error
from tables import TABLE1_FTCM, TABLE2_FLM
from xfdd.autodiff import ShapeError, Tape, Tensor, ops
from xfdd.nn import (
    GRU,
    LSTM,
    RNN,
    BatchNorm1d,
    Conv1d,
    Dropout,
    LayerSpec,
    Linear,
    MaxPool1d,
    ModelSpec,
    SpecError,
    build_model,
    count_params,
    flm_spec,
    ftcm_spec,
    gru_forward,
    propagate,
)
from xfdd.nn.serialize import CheckpointError, deserialize, load, manifest, save, serialize

F8 = np.float64


@pytest.mark.parametrize("kind", KINDS)
def test_layer_gradients_few_seeds(kind):
    assert max(layer_grad_error(kind, s) for s in range(3)) < 1e-5


# conv1d ---------------------------------------------------------------------

def test_conv_table_row():
    conv = Conv1d(24, 32, 3, 1, 1)
    assert conv.out_shape((24, 500)) == (32, 500)
    assert conv.param_count() == 2336


def test_conv_identity_kernel():
    conv = Conv1d(1, 1, 1, padding=0, dtype=F8)
    conv.params["weight"].data[:] = 1.0
    x = np.random.default_rng(0).normal(size=(2, 1, 7))
    np.testing.assert_array_equal(conv(Tensor(x)).data, x)


def test_conv_is_cross_correlation():
    conv = Conv1d(1, 1, 3, padding=0, dtype=F8)
    conv.params["weight"].data[:] = [1, 0, -1]
    out = conv(Tensor(np.array([[[1.0, 2, 3, 4, 5]]])))
    np.testing.assert_array_equal(out.data, [[[-2, -2, -2]]])


def test_conv_channel_mismatch():
    conv = Conv1d(3, 2)
    with pytest.raises(ShapeError):
        conv.out_shape((4, 10))
    with pytest.raises(ShapeError):
        conv(Tensor(np.zeros((1, 4, 10), dtype=np.float32)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2))
def test_conv_length_formula(length, k, stride, pad):
    conv = Conv1d(2, 3, k, stride, pad)
    if length + 2 * pad < k:
        with pytest.raises(ShapeError):
            conv.out_shape((2, length))
        return
    expect = (length + 2 * pad - k) // stride + 1
    assert conv.out_shape((2, length)) == (3, expect)
    assert conv(Tensor(np.zeros((1, 2, length), dtype=np.float32))).shape == (1, 3, expect)
    assert conv.param_count() == 3 * 2 * k + 3


# maxpool ----------------------------------------------------------------------

def test_maxpool_lengths():
    assert MaxPool1d(2, 1).out_shape((32, 500)) == (32, 499)
    assert MaxPool1d(2, 2).out_shape((256, 497)) == (256, 248)
    with pytest.raises(ShapeError):
        MaxPool1d(5, 1).out_shape((1, 4))


def test_maxpool_constant_input_and_tie_routing():
    x = Tensor(np.full((1, 1, 4), 3.0), requires_grad=True)
    with Tape() as tape:
        out = ops.maxpool1d(x, 2, 2)
        total = out.sum()
    np.testing.assert_array_equal(out.data, [[[3.0, 3.0]]])
    g = tape.backward(total)[x]
    # ties route to the first position in each window
    np.testing.assert_array_equal(g, [[[1.0, 0.0, 1.0, 0.0]]])


# batchnorm -------------------------------------------------------------------

def test_batchnorm_params_and_hand_values():
    assert BatchNorm1d(32).param_count() == 64
    bn = BatchNorm1d(1, dtype=F8)
    bn.params["gamma"].data[:] = 2.0
    bn.params["beta"].data[:] = 3.0
    out = bn(Tensor(np.array([[[-1.0, 1.0]]])), train=True).data.ravel()
    s = 2 / math.sqrt(1 + 1e-5)
    np.testing.assert_allclose(out, [3 - s, 3 + s], rtol=1e-12)


def test_batchnorm_idempotent_on_normalized_data():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 3, 50))
    x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
    out = BatchNorm1d(3, dtype=F8)(Tensor(x), train=True).data
    np.testing.assert_allclose(out, x, atol=1e-4)


def test_batchnorm_zero_variance_and_running_stats():
    bn = BatchNorm1d(2, dtype=F8)
    out = bn(Tensor(np.ones((4, 2, 3))), train=True).data
    assert np.isfinite(out).all() and np.allclose(out, 0)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.1)
    np.testing.assert_allclose(bn.buffers["running_var"], 0.9)


def test_batchnorm_eval_is_affine_and_pure():
    bn = BatchNorm1d(2, dtype=F8)
    bn.buffers["running_mean"][:] = [1.0, -1.0]
    bn.buffers["running_var"][:] = [4.0, 0.25]
    x = np.random.default_rng(1).normal(size=(3, 2, 5))
    a, b = bn(Tensor(x)).data, bn(Tensor(x)).data
    assert a.tobytes() == b.tobytes()
    expect = (x - np.array([1.0, -1.0])[:, None]) / np.sqrt(np.array([4.0, 0.25])[:, None] + 1e-5)
    np.testing.assert_allclose(a, expect, rtol=1e-12)


def test_batchnorm_train_needs_two_values():
    with pytest.raises(ValueError):
        BatchNorm1d(1)(Tensor(np.ones((1, 1, 1), dtype=np.float32)), train=True)


# dropout ---------------------------------------------------------------------

def test_dropout_modes():
    x = Tensor(np.arange(10.0))
    assert Dropout(0.0)(x, train=True, rng=np.random.default_rng(0)).data.tolist() == x.data.tolist()
    assert Dropout(0.5)(x, train=False).data.tolist() == x.data.tolist()
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_dropout_law_of_large_numbers():
    x = Tensor(np.ones(1_000_000))
    out = Dropout(0.3)(x, train=True, rng=np.random.default_rng(0)).data
    assert abs((out != 0).mean() - 0.7) < 0.01
    assert abs(out.mean() - 1.0) < 0.01


# GRU and recurrent baselines --------------------------------------------------

def test_gru_zero_params_fixed_point():
    gru = GRU(3, 4, 2, dtype=F8)
    for p in gru.params.values():
        p.data[:] = 0
    out, final = gru_forward(Tensor(np.random.default_rng(0).normal(size=(6, 3))), gru)
    assert np.all(out.data == 0) and np.all(final.data == 0)


def test_scalar_gru_hand_evaluation():
    gru = GRU(1, 1, 1, dtype=F8)
    for p in gru.params.values():
        p.data[:] = 0
    gru.params["U_h0"].data[:] = 1.0
    out, _ = gru_forward(Tensor(np.array([[1.0]])), gru)
    assert abs(out.data.item() - 0.5 * math.tanh(1.0)) < 1e-12
    assert abs(out.data.item() - 0.38080) < 1e-5


def test_gru_table_shape_and_param_count():
    gru = GRU(256, 512, 2)
    assert gru.table_shape((256, 248)) == [[[-1, 248, 512], [-1, 2, 512]]]
    assert gru.param_count() == 3 * (512 * 256 + 512 * 512 + 512) + 3 * (512 * 512 + 512 * 512 + 512)
    assert gru.param_count() == 2_755_584


def test_gru_forward_shapes_small():
    gru = GRU(5, 7, 2)
    out, final = gru_forward(Tensor(np.zeros((9, 5), dtype=np.float32)), gru)
    assert out.shape == (9, 7) and final.shape == (2, 7)


def test_gru_dimension_mismatch():
    with pytest.raises(ShapeError):
        gru_forward(Tensor(np.zeros((4, 3), dtype=np.float32)), GRU(5, 2))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-50, 50)), st.integers(0, 1000))
def test_gru_hidden_state_bounded(seq, seed):
    gru = GRU(3, 4, 2, rng=np.random.default_rng(seed), dtype=F8)
    for p in gru.params.values():
        p.data *= 5
    out, final = gru_forward(Tensor(seq), gru)
    assert np.abs(out.data).max() <= 1.0 and np.abs(final.data).max() <= 1.0


def test_zero_rnn_gives_uniform_head():
    spec = ModelSpec([LayerSpec("rnn", {"input_size": 3, "hidden_size": 4, "num_layers": 1}),
                      LayerSpec("linear", {"in_features": 4, "out_features": 7})], 3, 5)
    model = build_model(spec, dtype=F8)
    for p in model.parameters():
        p.data[:] = 0
    proba = model.predict_proba(np.random.default_rng(0).normal(size=(4, 3, 5)))
    np.testing.assert_allclose(proba, 1 / 7)


def test_lstm_gate_saturation_limits():
    # forget gate open, input gate closed: the cell carries c0 unchanged
    lstm = LSTM(2, 3, 1, dtype=F8)
    for p in lstm.params.values():
        p.data[:] = 0
    b = lstm.params["b0"].data
    b[0:3], b[3:6], b[9:12] = -50, 50, 50
    c0 = Tensor(np.array([[[0.5, -0.2, 0.1]]]))
    h0 = Tensor(np.zeros((1, 1, 3)))
    x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 4)))
    _, final = lstm.run(x, h0, c0)
    np.testing.assert_allclose(final.data[0, 0], np.tanh([0.5, -0.2, 0.1]), atol=1e-12)
    # forget gate closed too: memory is wiped
    b[3:6] = -50
    _, final = lstm.run(x, h0, c0)
    np.testing.assert_allclose(final.data[0, 0], 0, atol=1e-12)


def test_rnn_cell_formula():
    rnn = RNN(2, 2, 1, dtype=F8)
    x = np.random.default_rng(3).normal(size=(1, 2, 3))
    U, W, b = (rnn.params[k].data for k in ("U0", "W0", "b0"))
    h = np.zeros(2)
    for t in range(3):
        h = np.tanh(W @ h + U @ x[0, :, t] + b)
    np.testing.assert_allclose(rnn(Tensor(x)).data[0], h, rtol=1e-12)


# linear head -----------------------------------------------------------------

def test_linear_param_count_and_softmax():
    assert Linear(512, 128).param_count() == 65_664
    p = ops.softmax_np(np.zeros((1, 7)))
    np.testing.assert_allclose(p, 1 / 7)
    np.testing.assert_allclose(ops.softmax_np(np.array([[1.0, 0.0]])), [[0.73106, 0.26894]], atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 7), elements=st.floats(-500, 500)))
def test_softmax_sums_to_one(z):
    p = ops.softmax_np(z)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)


# architectures ---------------------------------------------------------------

@pytest.mark.parametrize("spec_fn,table", [(ftcm_spec, TABLE1_FTCM), (flm_spec, TABLE2_FLM)])
def test_architecture_rows(spec_fn, table):
    rows = propagate(spec_fn())
    assert [(r.name, str(r.shape), r.table_params) for r in rows] == table


def test_empty_spec_rejected():
    spec = ModelSpec([], 24, 500)
    assert count_params(spec).total == 0
    with pytest.raises(SpecError):
        build_model(spec)


def test_shape_failure_names_first_bad_layer():
    spec = ftcm_spec()
    spec.layers[4].args["in_channels"] = 33
    with pytest.raises(SpecError, match="Conv1d-5"):
        propagate(spec)


def test_scaled_ftcm_builds():
    model = build_model(ftcm_spec(window=50, channel_divisor=4, hidden=64))
    assert model.predict(np.zeros((3, 24, 50))).shape == (3,)


def test_eval_forward_is_pure():
    model = build_model(ftcm_spec(window=20, channel_divisor=8, hidden=8))
    x = np.random.default_rng(0).normal(size=(2, 24, 20))
    assert model.logits(x).tobytes() == model.logits(x).tobytes()


# checkpoints -----------------------------------------------------------------

def _small():
    return build_model(ftcm_spec(window=20, channel_divisor=8, hidden=8), seed=3)


def test_serialize_round_trip_bit_exact(tmp_path):
    model = _small()
    model.layers[1].buffers["running_mean"][:] = 0.25
    again = deserialize(serialize(model))
    for (k, a), (_, b) in zip(model.state().items(), again.state().items()):
        assert a.tobytes() == b.tobytes(), k
    save(model, tmp_path / "m.ckpt")
    assert serialize(load(tmp_path / "m.ckpt")) == serialize(model)


def test_float64_round_trip():
    model = _small().astype(F8)
    again = deserialize(serialize(model))
    assert again.dtype == F8
    assert all(a.tobytes() == b.tobytes() for a, b in zip(model.state().values(), again.state().values()))


def test_truncated_checkpoint_names_missing_bytes():
    blob = serialize(_small())
    with pytest.raises(CheckpointError, match="bytes"):
        deserialize(blob[:-10])


def test_manifest_lists_table_rows():
    man = manifest(build_model(ftcm_spec()))
    assert len(man["layers"]) == 21
    assert man["precision"] == "<f4"
