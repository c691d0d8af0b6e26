import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xfdd.autodiff import (
    GradientCheckError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    grad_check,
    no_record,
    numeric_grad,
    ops,
    precision,
)


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def grad_of(f, x):
    with Tape() as tape:
        out = f(x)
    return tape.backward(out)[x]


# elementwise ---------------------------------------------------------------

def test_sigmoid_tanh_relu_values():
    assert ops.sigmoid(Tensor(0.0)).item() == 0.5
    assert ops.tanh(Tensor(0.0)).item() == 0.0
    np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])


def test_relu_derivative_at_zero_is_zero():
    x = leaf([0.0, 1.0, -1.0])
    np.testing.assert_array_equal(grad_of(lambda t: ops.relu(t).sum(), x), [0.0, 1.0, 0.0])


def test_elementwise_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError) as err:
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    assert "(3,)" in str(err.value) and "(4,)" in str(err.value)


def test_scalar_broadcast_allowed():
    x = leaf([1.0, 2.0])
    g = grad_of(lambda t: ops.mul(t, 3.0).sum(), x)
    np.testing.assert_array_equal(g, [3.0, 3.0])


@pytest.mark.parametrize("op", [ops.sigmoid, ops.tanh, ops.relu, ops.square, ops.abs])
def test_unary_grad_check(op):
    rng = np.random.default_rng(1)
    # keep relu/abs away from the kink
    x = rng.normal(size=(4, 3))
    x[np.abs(x) < 0.05] += 0.2
    assert grad_check(lambda t: op(t).sum(), leaf(x)) < 1e-6


@pytest.mark.parametrize("op", [ops.add, ops.sub, ops.mul])
def test_binary_grad_check(op):
    rng = np.random.default_rng(2)
    a, b = leaf(rng.normal(size=(3, 2))), leaf(rng.normal(size=(3, 2)))
    assert grad_check(lambda t: ops.square(op(t, b)).sum(), a) < 1e-6
    assert grad_check(lambda t: ops.square(op(a, t)).sum(), b) < 1e-6


# matmul ----------------------------------------------------------------------

def test_matmul_examples():
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2], [3, 4]])).data,
                                  [[1, 2], [3, 4]])
    assert ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_dimension_mismatch():
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_grad_is_row_sum_broadcast_and_matches_fd():
    rng = np.random.default_rng(3)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 5)))
    g = grad_of(lambda t: ops.matmul(t, b).sum(), a)
    np.testing.assert_allclose(g, np.broadcast_to(b.data.sum(axis=1), (3, 4)), rtol=1e-12)
    fd = numeric_grad(lambda t: ops.matmul(t, b).sum(), a, 1e-4, np.arange(a.size))
    np.testing.assert_allclose(g.ravel(), fd, rtol=1e-8)


# backward ------------------------------------------------------------------

def test_identity_and_square_derivatives():
    assert grad_of(lambda t: t, leaf(5.0)) == 1.0
    x = leaf(3.0)
    g = grad_of(lambda t: ops.square(t), x)
    eps = 1e-4
    fd = ((3 + eps) ** 2 - (3 - eps) ** 2) / (2 * eps)
    assert abs(g - 6.0) < 1e-12 and abs(g - fd) < 1e-8


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = ops.mul(x, 2.0)
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_tensors_outside_ancestry_get_zero_gradient():
    x, unused = leaf([1.0, 2.0]), leaf([[5.0]])
    with Tape() as tape:
        y = ops.square(x).sum()
    grads = tape.backward(y)
    np.testing.assert_array_equal(grads[unused], np.zeros((1, 1)))


def test_cycle_rejected_defensively():
    x = leaf([1.0])
    with Tape() as tape:
        y = ops.mul(x, 2.0)
        z = ops.mul(y, 3.0).sum()
    tape.nodes.reverse()  # corrupt the order by hand
    with pytest.raises(TapeError):
        tape.backward(z)


def test_replay_is_bit_identical():
    rng = np.random.default_rng(4)
    x = leaf(rng.normal(size=(5, 3)))
    w = leaf(rng.normal(size=(3, 2)))
    with Tape() as tape:
        y = ops.tanh(ops.matmul(x, w)).sum()
    g1, g2 = tape.backward(y)[w], tape.backward(y)[w]
    assert g1.tobytes() == g2.tobytes()


def test_no_record_skips_tape():
    x = leaf([1.0])
    with Tape() as tape:
        with no_record():
            ops.mul(x, 2.0)
    assert len(tape) == 0


def test_precision_context_switches_default_dtype():
    with precision(np.float64):
        assert Tensor([1, 2]).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)),
       st.floats(-2, 2), st.floats(-2, 2))
def test_backward_is_linear(x, a, b):
    def f(t):
        return ops.sigmoid(t).sum()

    def g(t):
        return ops.square(t).sum()

    t = leaf(x)
    combined = grad_of(lambda u: ops.add(ops.scale(f(u), a), ops.scale(g(u), b)), t)
    separate = a * grad_of(f, t) + b * grad_of(g, t)
    np.testing.assert_allclose(combined, separate, atol=1e-6)


# grad_check --------------------------------------------------------------------

def test_grad_check_sum_of_squares():
    x = leaf(np.random.default_rng(5).normal(size=10))
    assert grad_check(lambda t: ops.square(t).sum(), x, 1e-4) < 1e-6


def test_grad_check_sigmoid_linear():
    rng = np.random.default_rng(6)
    w = Tensor(rng.normal(size=(4, 1)))
    x = leaf(rng.normal(size=(3, 4)))
    assert grad_check(lambda t: ops.sigmoid(ops.matmul(t, w)).sum(), x) < 1e-5


def test_grad_check_constant_function():
    x = leaf([1.0, 2.0])
    assert grad_check(lambda t: ops.mul(t, 0.0).sum(), x) == 0.0


def test_grad_check_reports_nan_coordinate():
    x = leaf([1.0, -1.0])
    with pytest.raises(GradientCheckError) as err:
        grad_check(lambda t: ops.mul(t, np.nan).sum(), x)
    assert err.value.coordinate == 0


def test_grad_check_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        grad_check(lambda t: t.sum(), leaf([1.0]), eps=0)


def test_reshape_getitem_concat_stack_permute_gradients():
    rng = np.random.default_rng(7)
    x = leaf(rng.normal(size=(2, 3, 4)))

    def f(t):
        a = ops.permute(t, (0, 2, 1))
        b = ops.reshape(a, (2, 12))
        c = ops.concat([b[:, :5], b[:, 5:]], axis=1)
        d = ops.stack([c, ops.square(c)], axis=0)
        return ops.tanh(d).mean()

    assert grad_check(f, x) < 1e-6


def test_cross_entropy_grad_and_weights():
    rng = np.random.default_rng(8)
    z = leaf(rng.normal(size=(5, 7)))
    y = rng.integers(0, 7, size=5)
    w = rng.uniform(0.5, 2, size=7)
    # weights are per sample at the op level
    assert grad_check(lambda t: ops.cross_entropy(t, y, w[y]), z) < 1e-6
    with pytest.raises(ValueError):
        ops.cross_entropy(z, np.array([0, 1, 2, 3, 7]))
