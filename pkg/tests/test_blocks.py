import numpy as np
import pytest

from coatnet import (ConfigError, MBConvBlock, MBConvCfg, ShapeError, Tensor,
                     TfmCfg, TransformerBlock, stochastic_depth)
from coatnet.blocks import ConvBlock

import oracles


def _x(rng, *shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


# -- MBConv --------------------------------------------------------------------

def test_mbconv_zeroed_projection_is_identity(rng):
    blk = MBConvBlock(MBConvCfg(d_in=8, d_out=8, stride=1), rng, dtype=np.float64)
    blk.project.kernel.data[:] = 0.0
    blk.project.bias.data[:] = 0.0
    x = _x(rng, 2, 4, 4, 8)
    out = blk.forward(x, training=False)
    np.testing.assert_array_equal(out.data, x.data)


@pytest.mark.parametrize("variant", ["proj_pool", "strided_dwconv"])
def test_mbconv_stride2_shape_contract(rng, variant):
    blk = MBConvBlock(MBConvCfg(d_in=16, d_out=32, stride=2,
                                downsample_variant=variant), rng, dtype=np.float64)
    out = blk.forward(_x(rng, 1, 8, 8, 16), training=False)
    assert out.shape == (1, 4, 4, 32)


def test_mbconv_channel_mismatch(rng):
    blk = MBConvBlock(MBConvCfg(d_in=8, d_out=8), rng)
    with pytest.raises(ShapeError):
        blk.forward(_x(rng, 1, 4, 4, 4))


def test_mbconv_matches_composed_primitive_oracle(rng):
    """Stride-1 block vs an oracle composed of the naive reference pieces:
    batchnorm -> expand 1x1 -> gelu -> depthwise 3x3 -> gelu -> SE -> project
    1x1 -> residual add."""
    cfg = MBConvCfg(d_in=8, d_out=8, stride=1)
    blk = MBConvBlock(cfg, rng, dtype=np.float64)
    x = rng.standard_normal((1, 4, 4, 8))
    got = blk.forward(Tensor(x, dtype=np.float64), training=True).data

    h = oracles.batchnorm_train_direct(x, blk.norm.gamma.data, blk.norm.beta.data,
                                       blk.norm.epsilon)
    h = oracles.conv2d_loops(h, blk.expand.kernel.data, bias=blk.expand.bias.data)
    h = oracles.gelu_direct(h)
    h = oracles.conv2d_loops(h, blk.dw.kernel.data, groups=32, bias=blk.dw.bias.data)
    h = oracles.gelu_direct(h)
    pooled = h.mean(axis=(1, 2))
    gate = 1 / (1 + np.exp(-(oracles.gelu_direct(pooled @ blk.se_w1.data) @ blk.se_w2.data)))
    h = h * gate[:, None, None, :]
    h = oracles.conv2d_loops(h, blk.project.kernel.data, bias=blk.project.bias.data)
    np.testing.assert_allclose(got, x + h, atol=1e-6)


def test_mbconv_variants_same_param_count_and_shapes(rng):
    cfgs = [MBConvCfg(d_in=8, d_out=16, stride=2, downsample_variant=v)
            for v in ("proj_pool", "strided_dwconv")]
    blocks = [MBConvBlock(c, rng, dtype=np.float64) for c in cfgs]
    counts = [sum(t.size for _, t in b.named_tensors() if t.requires_grad)
              for b in blocks]
    assert counts[0] == counts[1]
    outs = [b.forward(_x(rng, 1, 6, 6, 8), training=False).shape for b in blocks]
    assert outs[0] == outs[1] == (1, 3, 3, 16)


def test_mbconv_se_width_guard():
    with pytest.raises(ConfigError):
        MBConvCfg(d_in=1, d_out=4, expansion=1)  # hidden=1 not divisible by 4


# -- Transformer block --------------------------------------------------------------

def test_tfm_zeroed_residual_weights_is_identity(rng):
    blk = TransformerBlock(TfmCfg(d_in=8, d_out=8, head_dim=4), 4, 4, rng,
                           dtype=np.float64)
    blk.attn.wo.data[:] = 0.0
    blk.ffn_w2.data[:] = 0.0
    x = _x(rng, 2, 4, 4, 8)
    out = blk.forward(x, training=False)
    np.testing.assert_array_equal(out.data, x.data)


def test_tfm_stride2_shape_contract(rng):
    blk = TransformerBlock(TfmCfg(d_in=64, d_out=128, head_dim=32, stride=2),
                           4, 4, rng, dtype=np.float64)
    out = blk.forward(_x(rng, 1, 8, 8, 64), training=False)
    assert out.shape == (1, 4, 4, 128)


def test_tfm_matches_composed_primitive_oracle(rng):
    """Stride-1 block vs layernorm -> relative attention -> residual ->
    layernorm -> FFN -> residual, all from the reference pieces."""
    cfg = TfmCfg(d_in=8, d_out=8, head_dim=4)
    blk = TransformerBlock(cfg, 3, 3, rng, dtype=np.float64)
    blk.bias_table.table.data[:] = 0.2 * rng.standard_normal(blk.bias_table.table.shape)
    x = rng.standard_normal((2, 3, 3, 8))
    got = blk.forward(Tensor(x, dtype=np.float64), training=False).data

    h = oracles.layernorm_direct(x, blk.attn_norm.gamma.data, blk.attn_norm.beta.data,
                                 blk.attn_norm.epsilon)
    attn = oracles.relative_attention_direct(
        h, blk.attn.wq.data, blk.attn.wk.data, blk.attn.wv.data, blk.attn.wo.data,
        blk.bias_table.table.data, cfg.heads, cfg.head_dim, "pre")
    x1 = x + attn
    f = oracles.layernorm_direct(x1, blk.ffn_norm.gamma.data, blk.ffn_norm.beta.data,
                                 blk.ffn_norm.epsilon)
    f = oracles.gelu_direct(f @ blk.ffn_w1.data) @ blk.ffn_w2.data
    np.testing.assert_allclose(got, x1 + f, atol=1e-6)


def test_tfm_grid_mismatch_raises(rng):
    blk = TransformerBlock(TfmCfg(d_in=8, d_out=8, head_dim=4), 2, 2, rng,
                           dtype=np.float64)
    from coatnet import ResolutionError
    with pytest.raises(ResolutionError):
        blk.forward(_x(rng, 1, 4, 4, 8), training=False)


def test_tfm_head_divisibility_guard():
    with pytest.raises(ConfigError):
        TfmCfg(d_in=8, d_out=12, head_dim=8)


# -- stochastic depth ------------------------------------------------------------------

def test_stochastic_depth_rate_zero_always_adds(rng):
    idn, res = _x(rng, 4, 2, 2, 3), _x(rng, 4, 2, 2, 3)
    out = stochastic_depth(idn, res, 0.0, training=True, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(out.data, idn.data + res.data)


def test_stochastic_depth_eval_passthrough(rng):
    idn, res = _x(rng, 4, 2, 2, 3), _x(rng, 4, 2, 2, 3)
    out = stochastic_depth(idn, res, 0.9, training=False)
    np.testing.assert_array_equal(out.data, idn.data + res.data)


def test_stochastic_depth_bad_rate(rng):
    with pytest.raises(ConfigError):
        stochastic_depth(_x(rng, 1, 1, 1, 1), _x(rng, 1, 1, 1, 1), 1.0, True,
                         np.random.default_rng(0))


def test_stochastic_depth_unbiased_monte_carlo(rng):
    """Mean residual contribution over many draws stays within 5% of the
    undropped value (the 1/(1-rate) rescale makes dropping unbiased)."""
    n = 10_000
    idn = Tensor(np.zeros((n, 1, 1, 1)), dtype=np.float64)
    res = Tensor(np.ones((n, 1, 1, 1)), dtype=np.float64)
    out = stochastic_depth(idn, res, 0.5, training=True,
                           rng=np.random.default_rng(123))
    mean = out.data.mean()
    assert abs(mean - 1.0) < 0.05
    kept = out.data[out.data != 0.0]
    np.testing.assert_allclose(kept, 2.0)  # survivors scaled by 1/(1-rate)


def test_conv_block_zeroed_conv_is_identity(rng):
    blk = ConvBlock(6, 6, 1, "batch", rng, dtype=np.float64)
    blk.conv.kernel.data[:] = 0.0
    blk.conv.bias.data[:] = 0.0
    x = _x(rng, 2, 5, 5, 6)
    np.testing.assert_array_equal(blk.forward(x, training=False).data, x.data)
