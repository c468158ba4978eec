import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coatnet import (ConvParams, NormParams, ShapeError, Tensor, backward,
                     conv2d, global_avg_pool, matmul, max_pool2d, norm,
                     squeeze_excite, tape, zeros, ones, gelu, from_values)
from coatnet.tensor import sigmoid

import oracles


def _t64(a, grad=False):
    return Tensor(np.asarray(a), dtype=np.float64, requires_grad=grad)


# -- conv2d ---------------------------------------------------------------------

def test_depthwise_one_hot_center_kernel_is_identity(rng):
    x = _t64(rng.standard_normal((2, 6, 7, 5)))
    k = np.zeros((3, 3, 1, 5))
    k[1, 1, 0, :] = 1.0
    out = conv2d(x, ConvParams(kernel=_t64(k), groups=5))
    np.testing.assert_array_equal(out.data, x.data)


def test_1x1_conv_equals_per_position_matmul(rng):
    x = _t64(rng.standard_normal((2, 4, 4, 3)))
    w = rng.standard_normal((3, 6))
    out = conv2d(x, ConvParams(kernel=_t64(w.reshape(1, 1, 3, 6))))
    want = matmul(x.reshape(2 * 16, 3), _t64(w)).data.reshape(2, 4, 4, 6)
    np.testing.assert_allclose(out.data, want, atol=1e-6)


def test_depthwise_stride2_matches_loop_oracle(rng):
    x = rng.standard_normal((1, 5, 5, 2))
    k = rng.standard_normal((3, 3, 1, 2))
    out = conv2d(_t64(x), ConvParams(kernel=_t64(k), stride=2, groups=2))
    assert out.shape == (1, 3, 3, 2)
    np.testing.assert_allclose(
        out.data, oracles.conv2d_loops(x, k, stride=2, groups=2), atol=1e-6)


def test_dense_conv_matches_loop_oracle_with_bias(rng):
    x = rng.standard_normal((2, 6, 5, 3))
    k = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    for stride in (1, 2):
        out = conv2d(_t64(x), ConvParams(kernel=_t64(k), bias=_t64(b), stride=stride))
        np.testing.assert_allclose(
            out.data, oracles.conv2d_loops(x, k, stride=stride, bias=b), atol=1e-6)


def test_grouped_conv_matches_loop_oracle(rng, each_backend):
    x = rng.standard_normal((1, 4, 4, 6))
    k = rng.standard_normal((3, 3, 3, 4))
    out = conv2d(_t64(x), ConvParams(kernel=_t64(k), groups=2))
    np.testing.assert_allclose(out.data, oracles.conv2d_loops(x, k, groups=2), atol=1e-6)


def test_conv_channel_mismatch_raises():
    with pytest.raises(ShapeError):
        conv2d(zeros((1, 4, 4, 3)), ConvParams(kernel=zeros((3, 3, 4, 8))))


def test_stride2_same_padding_halves_even_extents(rng):
    x = _t64(rng.standard_normal((1, 8, 12, 2)))
    out = conv2d(x, ConvParams(kernel=_t64(rng.standard_normal((3, 3, 2, 5))), stride=2))
    assert out.shape == (1, 4, 6, 5)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9))
def test_stride2_output_is_ceil_half(h, w):
    x = zeros((1, h, w, 1), dtype=np.float64)
    out = conv2d(x, ConvParams(kernel=zeros((3, 3, 1, 1), dtype=np.float64), stride=2))
    assert out.shape == (1, -(-h // 2), -(-w // 2), 1)


def test_valid_padding_shrinks():
    out = conv2d(zeros((1, 5, 5, 1)), ConvParams(kernel=zeros((3, 3, 1, 2)), padding="valid"))
    assert out.shape == (1, 3, 3, 2)


# -- norm ------------------------------------------------------------------------

def _norm_params(kind, c, eps=None):
    p = NormParams(kind=kind, gamma=ones((c,), dtype=np.float64, requires_grad=True),
                   beta=zeros((c,), dtype=np.float64, requires_grad=True))
    if eps is not None:
        p.epsilon = eps
    if kind == "batch":
        p.running_mean = zeros((c,), dtype=np.float64)
        p.running_var = ones((c,), dtype=np.float64)
    return p


def test_layer_norm_constant_vector_gives_beta():
    p = _norm_params("layer", 3)
    out = norm(_t64([[5.0, 5.0, 5.0]]), p)
    np.testing.assert_allclose(out.data, [[0.0, 0.0, 0.0]], atol=1e-12)
    p.beta.data[:] = [1.0, 2.0, 3.0]
    out = norm(_t64([[5.0, 5.0, 5.0]]), p)
    np.testing.assert_allclose(out.data, [[1.0, 2.0, 3.0]], atol=1e-12)


def test_batch_norm_train_standardizes(rng):
    x = _t64(rng.standard_normal((8, 5, 5, 4)) * 3.0 + 1.0)
    p = _norm_params("batch", 4, eps=0.0)
    out = norm(x, p, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), np.zeros(4), atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), np.ones(4), atol=1e-4)


def test_norm_matches_direct_formula(rng):
    x = rng.standard_normal((4, 3, 3, 6))
    gamma = rng.standard_normal(6)
    beta = rng.standard_normal(6)
    p = _norm_params("layer", 6)
    p.gamma.data[:] = gamma
    p.beta.data[:] = beta
    np.testing.assert_allclose(
        norm(_t64(x), p).data,
        oracles.layernorm_direct(x, gamma, beta, p.epsilon), atol=1e-6)
    pb = _norm_params("batch", 6)
    pb.gamma.data[:] = gamma
    pb.beta.data[:] = beta
    np.testing.assert_allclose(
        norm(_t64(x), pb, training=True).data,
        oracles.batchnorm_train_direct(x, gamma, beta, pb.epsilon), atol=1e-6)


def test_batch_norm_eval_before_training_uses_init_stats(rng):
    x = rng.standard_normal((2, 3, 3, 4))
    p = _norm_params("batch", 4)
    out = norm(_t64(x), p, training=False).data
    np.testing.assert_allclose(out, x / np.sqrt(1.0 + p.epsilon), atol=1e-6)


def test_batch_norm_updates_running_stats(rng):
    x = _t64(rng.standard_normal((16, 2, 2, 3)) + 2.0)
    p = _norm_params("batch", 3)
    norm(x, p, training=True)
    batch_mean = x.data.mean(axis=(0, 1, 2))
    np.testing.assert_allclose(p.running_mean.data, 0.01 * batch_mean, atol=1e-9)


def test_norm_shape_mismatch():
    with pytest.raises(ShapeError):
        norm(zeros((1, 2, 2, 5)), _norm_params("layer", 3))


# -- gelu ----------------------------------------------------------------------------

def test_gelu_zero():
    assert gelu(from_values([0.0])).data.tolist() == [0.0]


def test_gelu_large_positive_approaches_identity():
    x = _t64([8.0, 12.0])
    np.testing.assert_allclose(gelu(x).data, x.data, atol=1e-6)


def test_gelu_at_one_matches_erf_oracle():
    # frozen from the 64-bit erf oracle: 1 * Phi(1)
    assert abs(gelu(_t64([1.0])).data[0] - 0.8413447460685429) < 1e-7


def test_gelu_matches_oracle_on_range(each_backend):
    x = np.linspace(-4, 4, 101)
    np.testing.assert_allclose(gelu(_t64(x)).data, oracles.gelu_direct(x), atol=1e-9)


# -- pooling -----------------------------------------------------------------------

def test_max_pool_hand_checked():
    x = _t64(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
    assert max_pool2d(x).data.reshape(-1).tolist() == [4.0]


def test_max_pool_constant_input():
    out = max_pool2d(from_values(np.full((1, 4, 6, 2), 2.5)))
    np.testing.assert_array_equal(out.data, np.full((1, 2, 3, 2), 2.5))


def test_max_pool_odd_size_matches_loop_oracle(rng):
    x = rng.standard_normal((2, 5, 5, 3))
    out = max_pool2d(_t64(x))
    assert out.shape == (2, 3, 3, 3)
    np.testing.assert_allclose(out.data, oracles.maxpool2x2_loops(x), atol=1e-12)


def test_max_pool_tie_routes_gradient_to_first(each_backend):
    x = Tensor(np.full((1, 2, 2, 1), 7.0), dtype=np.float64, requires_grad=True)
    with tape():
        loss = max_pool2d(x).sum()
    g = backward(loss).get(x).reshape(4)
    np.testing.assert_array_equal(g, [1.0, 0.0, 0.0, 0.0])


def test_global_avg_pool_examples(rng):
    const = from_values(np.full((3, 4, 4, 2), 1.25))
    np.testing.assert_allclose(global_avg_pool(const).data, np.full((3, 2), 1.25), atol=1e-7)
    x = _t64(np.array([[1.0, 3.0], [5.0, 7.0]]).reshape(1, 2, 2, 1))
    assert global_avg_pool(x).data.tolist() == [[4.0]]
    r = rng.standard_normal((2, 3, 5, 4))
    np.testing.assert_allclose(global_avg_pool(_t64(r)).data,
                               r.sum(axis=(1, 2)) / 15.0, atol=1e-6)


# -- squeeze-excitation ----------------------------------------------------------------

def test_se_zero_second_weight_halves_input(rng):
    x = _t64(rng.standard_normal((2, 3, 3, 8)))
    w1 = _t64(rng.standard_normal((8, 2)))
    w2 = zeros((2, 8), dtype=np.float64)
    out = squeeze_excite(x, w1, w2)  # sigmoid(0) = 0.5
    np.testing.assert_allclose(out.data, x.data / 2.0, atol=1e-12)


def test_se_preserves_shape(rng):
    x = _t64(rng.standard_normal((3, 5, 7, 4)))
    out = squeeze_excite(x, _t64(rng.standard_normal((4, 1))),
                         _t64(rng.standard_normal((1, 4))))
    assert out.shape == x.shape


def test_se_matches_composed_primitive_oracle(rng):
    x = rng.standard_normal((2, 4, 4, 8))
    w1 = rng.standard_normal((8, 2))
    w2 = rng.standard_normal((2, 8))
    out = squeeze_excite(_t64(x), _t64(w1), _t64(w2)).data
    pooled = x.mean(axis=(1, 2))
    gate = 1.0 / (1.0 + np.exp(-(oracles.gelu_direct(pooled @ w1) @ w2)))
    np.testing.assert_allclose(out, x * gate[:, None, None, :], atol=1e-6)


# -- backend agreement ---------------------------------------------------------------

def test_backends_agree_on_conv_and_pool(rng):
    # raw kernels take pre-padded inputs: 6x6 padded, stride 2, k3 -> 2x2 out
    from coatnet import kernels
    x = rng.standard_normal((2, 6, 6, 4))
    kd = rng.standard_normal((3, 3, 1, 4))
    g = rng.standard_normal((2, 2, 2, 4))
    gp = rng.standard_normal((2, 3, 3, 4))
    results = {}
    before = kernels.backend_name()
    for name in ("numba", "numpy"):
        kernels.set_backend(name)
        fwd = kernels.conv_fwd(x, kd, 2, 2, 2, 4)
        bwi = kernels.conv_bwd_input(g, kd, 2, 6, 6, 4)
        bwk = kernels.conv_bwd_kernel(x, g, 2, 3, 3, 4)
        pf, arg = kernels.pool_fwd(x, 3, 3)
        pb = kernels.pool_bwd(gp, arg, 6, 6)
        results[name] = (fwd, bwi, bwk, pf, arg, pb)
    kernels.set_backend(before)
    for a, b in zip(results["numba"], results["numpy"]):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_backend_env_flag_selection():
    from coatnet import kernels
    before = kernels.backend_name()
    assert kernels.set_backend("numpy") == "numpy"
    assert kernels.set_backend("auto") == "numba"  # numba installed here
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")
    kernels.set_backend(before)
