"""Neural-net primitives over [N, H, W, C] tensors: convolution, norms,
pooling, squeeze-excitation. Each is differentiable through the tape.

Padding is the TF-style "same" convention: output extent ceil(in/stride),
total pad split with the extra row/column on the bottom/right. The FLOP
auditor assumes the same convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .tensor import Tensor, apply_op, gelu, sigmoid, sqrt

__all__ = [
    "ConvParams", "NormParams", "conv2d", "norm", "gelu", "max_pool2d",
    "global_avg_pool", "squeeze_excite", "same_geometry",
]


def same_geometry(h: int, w: int, kh: int, kw: int, stride: int):
    """Output extents and (top, bottom, left, right) pads for same padding."""
    ho = -(-h // stride)
    wo = -(-w // stride)
    ph = max((ho - 1) * stride + kh - h, 0)
    pw = max((wo - 1) * stride + kw - w, 0)
    return ho, wo, (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)


@dataclass
class ConvParams:
    kernel: Tensor                 # [kh, kw, cin/groups, cout]
    bias: Tensor | None = None     # [cout]
    stride: int = 1
    padding: str = "same"          # same | valid
    groups: int = 1


@dataclass
class NormParams:
    kind: str                      # batch | layer
    gamma: Tensor = None
    beta: Tensor = None
    epsilon: float = None
    momentum: float = 0.99         # batch only: running <- m*running + (1-m)*batch
    running_mean: Tensor = None    # float64 state, not trainable
    running_var: Tensor = None

    def __post_init__(self):
        if self.kind not in ("batch", "layer"):
            raise ConfigError(f"unknown norm kind {self.kind!r}")
        if self.epsilon is None:
            self.epsilon = 1e-3 if self.kind == "batch" else 1e-5


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    kh, kw, cpg, cout = p.kernel.shape
    n, h, w, cin = x.shape
    if cin != cpg * p.groups:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {cpg * p.groups}")
    if cout % p.groups:
        raise ShapeError(f"conv2d: groups={p.groups} does not divide cout={cout}")
    if p.padding == "same":
        ho, wo, (pt, pb, pl, pr) = same_geometry(h, w, kh, kw, p.stride)
    elif p.padding == "valid":
        ho = (h - kh) // p.stride + 1
        wo = (w - kw) // p.stride + 1
        pt = pb = pl = pr = 0
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    else:
        raise ConfigError(f"unknown padding {p.padding!r}")

    xp = _pad_zeros(x.data, pt, pb, pl, pr) if pt + pb + pl + pr else x.data
    kd = p.kernel.data
    stride, groups = p.stride, p.groups
    hp, wp = xp.shape[1], xp.shape[2]

    if groups == 1:
        y = _dense_fwd(xp, kd, stride, ho, wo)
    else:
        y = kernels.conv_fwd(xp, kd, stride, ho, wo, groups)
    inputs = [x, p.kernel]
    if p.bias is not None:
        y = y + p.bias.data
        inputs.append(p.bias)

    def vjp(g):
        g = np.ascontiguousarray(g)
        if groups == 1:
            gxp = _dense_bwd_input(g, kd, stride, hp, wp)
            gk = _dense_bwd_kernel(xp, g, stride, kh, kw)
        else:
            gxp = kernels.conv_bwd_input(g, kd, stride, hp, wp, groups)
            gk = kernels.conv_bwd_kernel(xp, g, stride, kh, kw, groups)
        gx = gxp[:, pt:hp - pb, pl:wp - pr, :] if pt + pb + pl + pr else gxp
        out = [gx, gk]
        if p.bias is not None:
            out.append(g.sum(axis=(0, 1, 2)))
        return tuple(out)

    return apply_op(y, tuple(inputs), vjp)


def _pad_zeros(x, pt, pb, pl, pr):
    n, h, w, c = x.shape
    xp = np.zeros((n, h + pt + pb, w + pl + pr, c), dtype=x.dtype)
    xp[:, pt:pt + h, pl:pl + w] = x
    return xp


def _cols_view(xp, kh, kw, stride, ho, wo):
    n, hp, wp, cin = xp.shape
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, ho, wo, kh, kw, cin), (s0, s1 * stride, s2 * stride, s1, s2, s3))


def _dense_fwd(xp, kd, stride, ho, wo):
    n, _, _, cin = xp.shape
    kh, kw, _, cout = kd.shape
    cols = _cols_view(xp, kh, kw, stride, ho, wo).reshape(n * ho * wo, kh * kw * cin)
    return (cols @ kd.reshape(kh * kw * cin, cout)).reshape(n, ho, wo, cout)


def _dense_bwd_input(g, kd, stride, hp, wp):
    n, ho, wo, cout = g.shape
    kh, kw, cin, _ = kd.shape
    g2 = g.reshape(n * ho * wo, cout)
    dxp = np.zeros((n, hp, wp, cin), dtype=g.dtype)
    for a in range(kh):
        for b in range(kw):
            d = (g2 @ kd[a, b].T).reshape(n, ho, wo, cin)
            dxp[:, a:a + stride * ho:stride, b:b + stride * wo:stride] += d
    return dxp


def _dense_bwd_kernel(xp, g, stride, kh, kw):
    n, ho, wo, cout = g.shape
    cin = xp.shape[3]
    g2 = g.reshape(n * ho * wo, cout)
    dk = np.empty((kh, kw, cin, cout), dtype=g.dtype)
    for a in range(kh):
        for b in range(kw):
            sl = xp[:, a:a + stride * ho:stride, b:b + stride * wo:stride]
            dk[a, b] = np.ascontiguousarray(sl).reshape(n * ho * wo, cin).T @ g2
    return dk


def norm(x: Tensor, p: NormParams, training: bool = False) -> Tensor:
    """LayerNorm over the channel axis per position, or BatchNorm over
    (N, H, W) per channel (biased variance; train mode also folds the batch
    stats into the running estimates)."""
    c = x.shape[-1]
    if p.gamma.shape != (c,):
        raise ShapeError(f"norm: gamma has shape {p.gamma.shape}, input channels {c}")
    if p.kind == "layer":
        return _norm_fused(x, p, axes=(x.ndim - 1,))[0]
    if training:
        out, bm, bv = _norm_fused(x, p, axes=tuple(range(x.ndim - 1)))
        mom = p.momentum
        p.running_mean.assign(mom * p.running_mean.data + (1.0 - mom) * bm)
        p.running_var.assign(mom * p.running_var.data + (1.0 - mom) * bv)
        return out
    # eval: per-channel affine with frozen statistics
    rm = p.running_mean.data.astype(x.dtype)
    rv = p.running_var.data.astype(x.dtype)
    inv = 1.0 / np.sqrt(rv + p.epsilon)
    xd = x.data
    xhat = (xd - rm) * inv
    gd = p.gamma.data
    out = xhat * gd + p.beta.data
    red = tuple(range(x.ndim - 1))

    def vjp(g):
        return (g * (gd * inv), (g * xhat).sum(axis=red), g.sum(axis=red))

    return apply_op(out, (x, p.gamma, p.beta), vjp)


def _norm_fused(x: Tensor, p: NormParams, axes: tuple[int, ...]):
    xd = x.data
    m = xd.mean(axis=axes, keepdims=True)
    xc = xd - m
    v = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(v + p.epsilon)
    xhat = xc * inv
    gd = p.gamma.data
    out = xhat * gd + p.beta.data
    red = tuple(range(xd.ndim - 1))  # gamma/beta are per channel (last axis)

    def vjp(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        return dx.astype(xd.dtype, copy=False), (g * xhat).sum(axis=red), g.sum(axis=red)

    return apply_op(out, (x, p.gamma, p.beta), vjp), m.reshape(-1), v.reshape(-1)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 window, stride 2, same padding; gradient routes to the argmax
    (first occurrence on ties)."""
    n, h, w, c = x.shape
    ho, wo = -(-h // 2), -(-w // 2)
    ph, pw = 2 * ho - h, 2 * wo - w
    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, ph), (0, pw), (0, 0)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    y, arg = kernels.pool_fwd(xp, ho, wo)

    def vjp(g):
        dxp = kernels.pool_bwd(np.ascontiguousarray(g), arg, 2 * ho, 2 * wo)
        return (dxp[:, :h, :w, :],)

    return apply_op(y, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    return x.mean(axis=(1, 2))


def squeeze_excite(x: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Channel gate: x scaled by sigmoid(w2 . gelu(w1 . avgpool(x)))."""
    n, h, w, c = x.shape
    pooled = global_avg_pool(x)            # [N, C]
    s = sigmoid((gelu(pooled @ w1)) @ w2)  # [N, C]
    return x * s.reshape(n, 1, 1, c)
