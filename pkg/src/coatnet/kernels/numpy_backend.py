"""Pure-numpy fallback kernels (vectorized shift-and-accumulate)."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def gelu_fwd(x):
    phi = (0.5 * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype, copy=False)
    return x * phi, phi


def gelu_bwd(x, phi, g):
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return (g * (phi + x * pdf)).astype(x.dtype, copy=False)


def conv_fwd(xp, k, stride, ho, wo, groups):
    n, hp, wp, cin = xp.shape
    kh, kw, cpg, cout = k.shape
    opg = cout // groups
    if cpg == 1 and opg == 1:  # depthwise: per-channel scale and add
        y = np.zeros((n, ho, wo, cout), dtype=xp.dtype)
        kd = k[:, :, 0, :]
        for a in range(kh):
            for b in range(kw):
                y += xp[:, a:a + stride * ho:stride, b:b + stride * wo:stride] * kd[a, b]
        return y
    xg = xp.reshape(n, hp, wp, groups, cpg)
    kg = k.reshape(kh, kw, cpg, groups, opg)
    y = np.zeros((n, ho, wo, groups, opg), dtype=xp.dtype)
    for a in range(kh):
        for b in range(kw):
            sl = xg[:, a:a + stride * ho:stride, b:b + stride * wo:stride]
            y += np.einsum("nijgc,cgo->nijgo", sl, kg[a, b])
    return y.reshape(n, ho, wo, cout)


def conv_bwd_input(g, k, stride, hp, wp, groups):
    n, ho, wo, cout = g.shape
    kh, kw, cpg, _ = k.shape
    cin = cpg * groups
    opg = cout // groups
    dxp = np.zeros((n, hp, wp, cin), dtype=g.dtype)
    if cpg == 1 and opg == 1:
        kd = k[:, :, 0, :]
        for a in range(kh):
            for b in range(kw):
                dxp[:, a:a + stride * ho:stride, b:b + stride * wo:stride] += g * kd[a, b]
        return dxp
    gg = g.reshape(n, ho, wo, groups, opg)
    kg = k.reshape(kh, kw, cpg, groups, opg)
    dxg = dxp.reshape(n, hp, wp, groups, cpg)
    for a in range(kh):
        for b in range(kw):
            dxg[:, a:a + stride * ho:stride, b:b + stride * wo:stride] += np.einsum(
                "nijgo,cgo->nijgc", gg, kg[a, b])
    return dxp


def conv_bwd_kernel(xp, g, stride, kh, kw, groups):
    n, ho, wo, cout = g.shape
    cin = xp.shape[3]
    cpg = cin // groups
    opg = cout // groups
    dk = np.zeros((kh, kw, cpg, cout), dtype=g.dtype)
    if cpg == 1 and opg == 1:
        for a in range(kh):
            for b in range(kw):
                sl = xp[:, a:a + stride * ho:stride, b:b + stride * wo:stride]
                dk[a, b, 0] = (sl * g).sum(axis=(0, 1, 2))
        return dk
    xg = xp.reshape(n, xp.shape[1], xp.shape[2], groups, cpg)
    gg = g.reshape(n, ho, wo, groups, opg)
    for a in range(kh):
        for b in range(kw):
            sl = xg[:, a:a + stride * ho:stride, b:b + stride * wo:stride]
            dk[a, b] = np.einsum("nijgc,nijgo->cgo", sl, gg).reshape(cpg, cout)
    return dk


def pool_fwd(xp, ho, wo):
    n, hp, wp, c = xp.shape
    win = xp.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, ho, wo, 4, c)
    arg = win.argmax(axis=3).astype(np.int8)  # first max wins ties
    y = np.take_along_axis(win, arg[:, :, :, None, :].astype(np.int64), axis=3)[:, :, :, 0, :]
    return y, arg


def pool_bwd(g, arg, hp, wp):
    n, ho, wo, c = g.shape
    dwin = np.zeros((n, ho, wo, 4, c), dtype=g.dtype)
    np.put_along_axis(dwin, arg[:, :, :, None, :].astype(np.int64), g[:, :, :, None, :], axis=3)
    return dwin.reshape(n, ho, wo, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, hp, wp, c)
