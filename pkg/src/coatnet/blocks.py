"""Pre-activation residual blocks: MBConv, relative-attention Transformer,
and the plain conv block used by the stem.

All three share the contract x <- x + Module(Norm(x)). The first block of a
stage halves the spatial extents; down-sampling runs separately per branch:
the identity side is Proj(Pool(x)), the residual side pools its normalized
input (Transformer) or strides its first convolution (MBConv, 'proj_pool'
variant) or its depthwise convolution ('strided_dwconv' variant). The
identity projection exists only when the block changes resolution or width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttnParams, init_bias_table, interpolate_bias, relative_mhsa
from .errors import ConfigError, ShapeError
from .ops import ConvParams, NormParams, conv2d, max_pool2d, norm, squeeze_excite
from .tensor import Tensor, gelu, matmul, ones, trunc_normal, zeros

__all__ = ["MBConvCfg", "TfmCfg", "MBConvBlock", "TransformerBlock", "ConvBlock",
           "stochastic_depth"]


def stochastic_depth(identity: Tensor, residual: Tensor, rate: float,
                     training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Residual add with per-sample drop of the residual branch.

    Training: each sample keeps its residual with probability 1-rate, scaled
    by 1/(1-rate) so the expectation is unchanged. Eval: plain add.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"stochastic depth rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return identity + residual
    n = residual.shape[0]
    keep = (rng.random(n) >= rate).astype(residual.data.dtype)
    mask = (keep / (1.0 - rate)).reshape((n,) + (1,) * (residual.ndim - 1))
    return identity + residual * mask


def _norm_params(kind: str, c: int, dtype) -> NormParams:
    p = NormParams(kind=kind,
                   gamma=ones((c,), dtype=dtype, requires_grad=True),
                   beta=zeros((c,), dtype=dtype, requires_grad=True))
    if kind == "batch":
        p.running_mean = zeros((c,), dtype=np.float64)
        p.running_var = ones((c,), dtype=np.float64)
    return p


def _conv(kh, kw, cin, cout, stride, rng, dtype, groups=1) -> ConvParams:
    fan_in = kh * kw * (cin // groups)
    kernel = trunc_normal((kh, kw, cin // groups, cout), np.sqrt(2.0 / fan_in),
                          rng, dtype=dtype, requires_grad=True)
    return ConvParams(kernel=kernel, bias=zeros((cout,), dtype=dtype, requires_grad=True),
                      stride=stride, groups=groups)


def _proj(din, dout, rng, dtype) -> ConvParams:
    return _conv(1, 1, din, dout, 1, rng, dtype)


def _norm_tensors(prefix: str, p: NormParams):
    yield f"{prefix}.gamma", p.gamma
    yield f"{prefix}.beta", p.beta
    if p.kind == "batch":
        yield f"{prefix}.running_mean", p.running_mean
        yield f"{prefix}.running_var", p.running_var


def _conv_tensors(prefix: str, p: ConvParams):
    yield f"{prefix}.kernel", p.kernel
    yield f"{prefix}.bias", p.bias


@dataclass
class MBConvCfg:
    d_in: int
    d_out: int
    stride: int = 1
    expansion: int = 4
    se_ratio: float = 0.25
    downsample_variant: str = "proj_pool"   # proj_pool | strided_dwconv
    norm_kind: str = "batch"

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ConfigError(f"MBConv stride must be 1 or 2, got {self.stride}")
        if self.downsample_variant not in ("proj_pool", "strided_dwconv"):
            raise ConfigError(f"unknown downsample variant {self.downsample_variant!r}")
        hidden = self.expansion * self.d_in
        if round(hidden * self.se_ratio) < 1 or hidden % int(1 / self.se_ratio):
            raise ConfigError(
                f"SE ratio {self.se_ratio} needs the hidden width {hidden} divisible by 4")


@dataclass
class TfmCfg:
    d_in: int
    d_out: int
    head_dim: int = 32
    stride: int = 1
    ffn_expansion: int = 4
    attn_mode: str = "pre"   # pre | post | none

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ConfigError(f"Transformer stride must be 1 or 2, got {self.stride}")
        if self.d_out % self.head_dim:
            raise ConfigError(f"width {self.d_out} not divisible by head size {self.head_dim}")

    @property
    def heads(self) -> int:
        return self.d_out // self.head_dim


class MBConvBlock:
    """norm -> expand 1x1 -> GELU -> depthwise 3x3 -> GELU -> SE -> project 1x1."""

    def __init__(self, cfg: MBConvCfg, rng, dtype=np.float32):
        self.cfg = cfg
        hidden = cfg.expansion * cfg.d_in
        expand_stride = 2 if (cfg.stride == 2 and cfg.downsample_variant == "proj_pool") else 1
        dw_stride = 2 if (cfg.stride == 2 and cfg.downsample_variant == "strided_dwconv") else 1
        self.norm = _norm_params(cfg.norm_kind, cfg.d_in, dtype)
        self.expand = _conv(1, 1, cfg.d_in, hidden, expand_stride, rng, dtype)
        self.dw = _conv(3, 3, hidden, hidden, dw_stride, rng, dtype, groups=hidden)
        se_mid = int(hidden * cfg.se_ratio)
        self.se_w1 = trunc_normal((hidden, se_mid), 0.02, rng, dtype=dtype, requires_grad=True)
        self.se_w2 = trunc_normal((se_mid, hidden), 0.02, rng, dtype=dtype, requires_grad=True)
        self.project = _conv(1, 1, hidden, cfg.d_out, 1, rng, dtype)
        self.idproj = (_proj(cfg.d_in, cfg.d_out, rng, dtype)
                       if cfg.stride == 2 or cfg.d_in != cfg.d_out else None)

    def forward(self, x: Tensor, training: bool = False, sd_rate: float = 0.0,
                sd_rng=None) -> Tensor:
        if x.shape[-1] != self.cfg.d_in:
            raise ShapeError(f"MBConv expects {self.cfg.d_in} channels, got {x.shape[-1]}")
        h = norm(x, self.norm, training)
        h = gelu(conv2d(h, self.expand))
        h = gelu(conv2d(h, self.dw))
        h = squeeze_excite(h, self.se_w1, self.se_w2)
        h = conv2d(h, self.project)
        identity = max_pool2d(x) if self.cfg.stride == 2 else x
        if self.idproj is not None:
            identity = conv2d(identity, self.idproj)
        return stochastic_depth(identity, h, sd_rate, training, sd_rng)

    def named_tensors(self):
        yield from _norm_tensors("norm", self.norm)
        yield from _conv_tensors("expand", self.expand)
        yield from _conv_tensors("dw", self.dw)
        yield "se.w1", self.se_w1
        yield "se.w2", self.se_w2
        yield from _conv_tensors("project", self.project)
        if self.idproj is not None:
            yield from _conv_tensors("idproj", self.idproj)


class TransformerBlock:
    """Attention sublayer then FFN sublayer, both pre-activation residuals.

    grid_h/grid_w are the extents the attention runs on, i.e. after the
    stride-2 pooling when this is the first block of a stage.
    """

    def __init__(self, cfg: TfmCfg, grid_h: int, grid_w: int, rng, dtype=np.float32):
        self.cfg = cfg
        self.grid_h, self.grid_w = grid_h, grid_w
        m = cfg.heads * cfg.head_dim
        self.attn_norm = _norm_params("layer", cfg.d_in, dtype)
        self.attn = AttnParams(
            heads=cfg.heads, head_dim=cfg.head_dim,
            wq=trunc_normal((cfg.d_in, m), 0.02, rng, dtype=dtype, requires_grad=True),
            wk=trunc_normal((cfg.d_in, m), 0.02, rng, dtype=dtype, requires_grad=True),
            wv=trunc_normal((cfg.d_in, m), 0.02, rng, dtype=dtype, requires_grad=True),
            wo=trunc_normal((m, cfg.d_out), 0.02, rng, dtype=dtype, requires_grad=True))
        self.bias_table = (init_bias_table(grid_h, grid_w, cfg.heads, dtype)
                           if cfg.attn_mode != "none" else None)
        self.idproj = (_proj(cfg.d_in, cfg.d_out, rng, dtype)
                       if cfg.stride == 2 or cfg.d_in != cfg.d_out else None)
        self.ffn_norm = _norm_params("layer", cfg.d_out, dtype)
        f = cfg.ffn_expansion * cfg.d_out
        self.ffn_w1 = trunc_normal((cfg.d_out, f), 0.02, rng, dtype=dtype, requires_grad=True)
        self.ffn_w2 = trunc_normal((f, cfg.d_out), 0.02, rng, dtype=dtype, requires_grad=True)

    def forward(self, x: Tensor, training: bool = False, sd_rate: float = 0.0,
                sd_rng=None) -> Tensor:
        if x.shape[-1] != self.cfg.d_in:
            raise ShapeError(f"Transformer expects {self.cfg.d_in} channels, got {x.shape[-1]}")
        h = norm(x, self.attn_norm, training)
        identity = x
        if self.cfg.stride == 2:
            h = max_pool2d(h)          # pooled on both branches' inputs
            identity = max_pool2d(x)
        attn_out = relative_mhsa(h, self.attn, self.bias_table, self.cfg.attn_mode, training)
        if self.idproj is not None:
            identity = conv2d(identity, self.idproj)
        x1 = stochastic_depth(identity, attn_out, sd_rate, training, sd_rng)

        f = norm(x1, self.ffn_norm, training)
        f = matmul(gelu(matmul(f, self.ffn_w1)), self.ffn_w2)
        return stochastic_depth(x1, f, sd_rate, training, sd_rng)

    def adapt_grid(self, new_h: int, new_w: int) -> None:
        if self.bias_table is not None:
            self.bias_table = interpolate_bias(self.bias_table, new_h, new_w)
        self.grid_h, self.grid_w = new_h, new_w

    def named_tensors(self):
        yield from _norm_tensors("attn_norm", self.attn_norm)
        yield "attn.wq", self.attn.wq
        yield "attn.wk", self.attn.wk
        yield "attn.wv", self.attn.wv
        yield "attn.wo", self.attn.wo
        if self.bias_table is not None:
            yield "attn.rel_bias", self.bias_table.table
        if self.idproj is not None:
            yield from _conv_tensors("idproj", self.idproj)
        yield from _norm_tensors("ffn_norm", self.ffn_norm)
        yield "ffn.w1", self.ffn_w1
        yield "ffn.w2", self.ffn_w2


class ConvBlock:
    """Plain residual 3x3 conv block: x + Conv(GELU(Norm(x)))."""

    def __init__(self, d_in: int, d_out: int, stride: int, norm_kind: str,
                 rng, dtype=np.float32):
        self.d_in, self.d_out, self.stride = d_in, d_out, stride
        self.norm = _norm_params(norm_kind, d_in, dtype)
        self.conv = _conv(3, 3, d_in, d_out, stride, rng, dtype)
        self.idproj = (_proj(d_in, d_out, rng, dtype)
                       if stride == 2 or d_in != d_out else None)

    def forward(self, x: Tensor, training: bool = False, sd_rate: float = 0.0,
                sd_rng=None) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"conv block expects {self.d_in} channels, got {x.shape[-1]}")
        h = conv2d(gelu(norm(x, self.norm, training)), self.conv)
        identity = max_pool2d(x) if self.stride == 2 else x
        if self.idproj is not None:
            identity = conv2d(identity, self.idproj)
        return stochastic_depth(identity, h, sd_rate, training, sd_rng)

    def named_tensors(self):
        yield from _norm_tensors("norm", self.norm)
        yield from _conv_tensors("conv", self.conv)
        if self.idproj is not None:
            yield from _conv_tensors("idproj", self.idproj)
