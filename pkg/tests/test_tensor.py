import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coatnet import (NoGraphError, ShapeError, Tensor, backward, finite_diff,
                     from_values, full, log_softmax, matmul, ones, softmax,
                     take, tape, trunc_normal, zeros)
from coatnet.tensor import exp

import oracles


# -- constructors -------------------------------------------------------------

def test_zeros_shape_and_values():
    t = zeros((2, 3))
    assert t.shape == (2, 3) and t.size == 6
    assert (t.data == 0.0).all()


def test_constant_fill():
    t = full((1,), 5.0)
    assert t.data.tolist() == [5.0]


def test_bad_extents_rejected():
    for shape in [(0,), (2, -1), (3, 0, 2)]:
        with pytest.raises(ShapeError):
            zeros(shape)


def test_trunc_normal_deterministic_for_seed():
    a = trunc_normal((4,), 0.02, rng=7)
    b = trunc_normal((4,), 0.02, rng=7)
    assert (a.data == b.data).all()
    c = trunc_normal((4,), 0.02, rng=8)
    assert (a.data != c.data).any()


def test_trunc_normal_clamps_at_two_sigma():
    t = trunc_normal((10000,), 0.5, rng=0)
    assert np.abs(t.data).max() <= 1.0 + 1e-6


# -- matmul --------------------------------------------------------------------

def test_matmul_identity():
    a = from_values(np.arange(9.0).reshape(3, 3))
    eye = from_values(np.eye(3))
    assert np.array_equal(matmul(eye, a).data, a.data)


def test_matmul_hand_checked():
    out = matmul(from_values([[1.0, 2.0], [3.0, 4.0]]), from_values([[1.0], [1.0]]))
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_against_loop_oracle(rng):
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((4, 3))
    got = matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).data
    np.testing.assert_allclose(got, oracles.matmul_loops(a, b), atol=1e-6)


def test_matmul_batched_broadcast(rng):
    a = rng.standard_normal((2, 3, 4, 5))
    b = rng.standard_normal((5, 6))
    got = matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).data
    np.testing.assert_allclose(got, a @ b, atol=1e-12)


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(zeros((2, 3)), zeros((4, 2)))
    with pytest.raises(ShapeError):
        matmul(zeros((3,)), zeros((3, 2)))


# -- elementwise ------------------------------------------------------------------

def test_add_zero_is_identity(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    out = x + zeros((3, 4))
    assert np.array_equal(out.data, x.data)


def test_scalar_scale():
    out = from_values([2.0, 3.0]) * 0.5
    assert out.data.tolist() == [1.0, 1.5]


def test_exp_zero():
    assert exp(from_values([0.0])).data.tolist() == [1.0]


def test_broadcast_trailing_rule(rng):
    x = Tensor(rng.standard_normal((2, 3, 4)))
    y = Tensor(rng.standard_normal((4,)))
    np.testing.assert_array_equal((x + y).data, x.data + y.data)


def test_non_broadcastable_shapes_raise():
    with pytest.raises(ShapeError):
        zeros((2, 3)) + zeros((2, 4))


def test_div_by_zero_flagged_by_finiteness_check():
    out = from_values([1.0]) / from_values([0.0])
    assert not out.all_finite()


# -- softmax -----------------------------------------------------------------------

def test_softmax_uniform():
    out = softmax(from_values([0.0, 0.0, 0.0]), axis=0)
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)


def test_softmax_large_logits_stable():
    out = softmax(from_values([1000.0, 0.0]), axis=0)
    assert out.all_finite()
    np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)


def test_softmax_matches_direct_oracle(rng):
    x = rng.standard_normal(6)
    got = softmax(Tensor(x, dtype=np.float64), axis=0).data
    np.testing.assert_allclose(got, oracles.softmax_direct(x, axis=0), atol=1e-6)


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        softmax(zeros((2, 3)), axis=5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.integers(min_value=1, max_value=4))
def test_softmax_slices_sum_to_one(vals, rows):
    x = Tensor(np.tile(np.asarray(vals, dtype=np.float64), (rows, 1)))
    out = softmax(x, axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(rows), atol=1e-5)
    assert ((out.data > 0) & (out.data <= 1)).all()


def test_log_softmax_matches_log_of_softmax(rng):
    x = Tensor(rng.standard_normal((3, 5)), dtype=np.float64)
    np.testing.assert_allclose(log_softmax(x).data, np.log(softmax(x).data), atol=1e-12)


# -- autodiff ---------------------------------------------------------------------

def test_backward_linear():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with tape():
        loss = x.sum()
    g = backward(loss)
    assert g.get(x).tolist() == [1.0, 1.0, 1.0]


def test_backward_quadratic():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with tape():
        loss = (x * x).sum()
    assert backward(loss).get(x).tolist() == [4.0]


def test_backward_fanout_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with tape():
        loss = (x + x).sum()
    assert backward(loss).get(x).tolist() == [2.0]


def test_backward_detached_raises():
    x = Tensor(np.array([1.0]), requires_grad=True)
    loss = x.sum()  # no tape active
    with pytest.raises(NoGraphError):
        backward(loss)


def test_backward_consumes_graph():
    x = Tensor(np.array([1.0]), requires_grad=True)
    with tape():
        loss = (x * x).sum()
    backward(loss)
    with pytest.raises(NoGraphError):
        backward(loss)


def test_unreached_parameter_reads_zero_gradient():
    x = Tensor(np.array([1.0]), requires_grad=True)
    unused = Tensor(np.array([5.0, 6.0]), requires_grad=True)
    with tape():
        loss = x.sum()
    g = backward(loss)
    assert unused not in g
    assert g.get(unused).tolist() == [0.0, 0.0]


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with tape():
        y = x * 2.0
    with pytest.raises(ShapeError):
        backward(y)


def test_take_gathers_and_scatters():
    x = Tensor(np.arange(10.0).reshape(2, 5), requires_grad=True)
    idx = np.array([[0, 0], [4, 1]])
    with tape():
        out = take(x, idx, axis=1)
        loss = out.sum()
    np.testing.assert_array_equal(out.data, x.data[:, idx])
    g = backward(loss).get(x)
    np.testing.assert_array_equal(g, np.tile([2.0, 1.0, 0.0, 0.0, 1.0], (2, 1)))


# -- finite differences ----------------------------------------------------------

def test_finite_diff_sum_is_ones(rng):
    x = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
    grad = finite_diff(lambda t: t.sum(), x, eps=1e-5)
    np.testing.assert_allclose(grad, np.ones((2, 3)), atol=1e-8)


def test_finite_diff_square():
    x = Tensor(np.array([3.0]), dtype=np.float64)
    grad = finite_diff(lambda t: (t * t).sum(), x, eps=1e-5)
    np.testing.assert_allclose(grad, [6.0], atol=1e-6)


def test_backward_matches_finite_diff_on_composite(rng):
    w = Tensor(rng.standard_normal((4, 4)), dtype=np.float64, requires_grad=True)
    x = Tensor(rng.standard_normal((3, 4)), dtype=np.float64)
    mixw = Tensor(rng.standard_normal((3, 4)), dtype=np.float64)

    def f(wt):
        return (softmax(matmul(x, wt), axis=-1) * mixw).sum()

    with tape():
        loss = f(w)
    analytic = backward(loss).get(w)
    numeric = finite_diff(f, w, eps=1e-4)
    denom = max(np.abs(analytic).max(), np.abs(numeric).max())
    assert np.abs(analytic - numeric).max() / denom < 1e-3
