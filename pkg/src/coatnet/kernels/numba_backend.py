"""@njit kernels; loop orders keep the channel axis innermost so LLVM
vectorizes it (fastmath only relaxes summation order, results stay
deterministic for a fixed build)."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, fastmath=True, nogil=True)

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


@njit(**_JIT)
def gelu_fwd(x):
    y = np.empty_like(x)
    phi = np.empty_like(x)
    xf, yf, pf = x.ravel(), y.ravel(), phi.ravel()
    for i in range(xf.size):
        v = xf[i]
        c = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        pf[i] = c
        yf[i] = v * c
    return y, phi


@njit(**_JIT)
def gelu_bwd(x, phi, g):
    out = np.empty_like(x)
    xf, pf, gf, of = x.ravel(), phi.ravel(), g.ravel(), out.ravel()
    for i in range(xf.size):
        v = xf[i]
        pdf = _INV_SQRT2PI * math.exp(-0.5 * v * v)
        of[i] = gf[i] * (pf[i] + v * pdf)
    return out


@njit(**_JIT)
def conv_fwd(xp, k, stride, ho, wo, groups):
    n, hp, wp, cin = xp.shape
    kh, kw, cpg, cout = k.shape
    opg = cout // groups
    y = np.zeros((n, ho, wo, cout), dtype=xp.dtype)
    if cpg == 1 and opg == 1:  # depthwise
        for s in range(n):
            for i in range(ho):
                for j in range(wo):
                    ii = i * stride
                    jj = j * stride
                    for a in range(kh):
                        for b in range(kw):
                            for c in range(cin):
                                y[s, i, j, c] += xp[s, ii + a, jj + b, c] * k[a, b, 0, c]
    else:
        for s in range(n):
            for i in range(ho):
                for j in range(wo):
                    ii = i * stride
                    jj = j * stride
                    for a in range(kh):
                        for b in range(kw):
                            for gi in range(groups):
                                base = gi * opg
                                for ic in range(cpg):
                                    v = xp[s, ii + a, jj + b, gi * cpg + ic]
                                    for oc in range(opg):
                                        y[s, i, j, base + oc] += v * k[a, b, ic, base + oc]
    return y


@njit(**_JIT)
def conv_bwd_input(g, k, stride, hp, wp, groups):
    n, ho, wo, cout = g.shape
    kh, kw, cpg, _ = k.shape
    cin = cpg * groups
    opg = cout // groups
    dxp = np.zeros((n, hp, wp, cin), dtype=g.dtype)
    if cpg == 1 and opg == 1:
        for s in range(n):
            for i in range(ho):
                for j in range(wo):
                    ii = i * stride
                    jj = j * stride
                    for a in range(kh):
                        for b in range(kw):
                            for c in range(cin):
                                dxp[s, ii + a, jj + b, c] += g[s, i, j, c] * k[a, b, 0, c]
    else:
        for s in range(n):
            for i in range(ho):
                for j in range(wo):
                    ii = i * stride
                    jj = j * stride
                    for a in range(kh):
                        for b in range(kw):
                            for gi in range(groups):
                                base = gi * opg
                                for ic in range(cpg):
                                    acc = g.dtype.type(0)
                                    for oc in range(opg):
                                        acc += g[s, i, j, base + oc] * k[a, b, ic, base + oc]
                                    dxp[s, ii + a, jj + b, gi * cpg + ic] += acc
    return dxp


@njit(**_JIT)
def conv_bwd_kernel(xp, g, stride, kh, kw, groups):
    n, ho, wo, cout = g.shape
    cin = xp.shape[3]
    cpg = cin // groups
    opg = cout // groups
    dk = np.zeros((kh, kw, cpg, cout), dtype=g.dtype)
    if cpg == 1 and opg == 1:
        for s in range(n):
            for i in range(ho):
                for j in range(wo):
                    ii = i * stride
                    jj = j * stride
                    for a in range(kh):
                        for b in range(kw):
                            for c in range(cin):
                                dk[a, b, 0, c] += xp[s, ii + a, jj + b, c] * g[s, i, j, c]
    else:
        for s in range(n):
            for i in range(ho):
                for j in range(wo):
                    ii = i * stride
                    jj = j * stride
                    for a in range(kh):
                        for b in range(kw):
                            for gi in range(groups):
                                base = gi * opg
                                for ic in range(cpg):
                                    v = xp[s, ii + a, jj + b, gi * cpg + ic]
                                    for oc in range(opg):
                                        dk[a, b, ic, base + oc] += v * g[s, i, j, base + oc]
    return dk


@njit(**_JIT)
def pool_fwd(xp, ho, wo):
    n, hp, wp, c = xp.shape
    y = np.empty((n, ho, wo, c), dtype=xp.dtype)
    arg = np.zeros((n, ho, wo, c), dtype=np.int8)
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    best = xp[s, 2 * i, 2 * j, ch]
                    bidx = np.int8(0)
                    for w in range(1, 4):
                        v = xp[s, 2 * i + w // 2, 2 * j + w % 2, ch]
                        if v > best:  # strict: first occurrence wins ties
                            best = v
                            bidx = np.int8(w)
                    y[s, i, j, ch] = best
                    arg[s, i, j, ch] = bidx
    return y, arg


@njit(**_JIT)
def pool_bwd(g, arg, hp, wp):
    n, ho, wo, c = g.shape
    dxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    w = arg[s, i, j, ch]
                    dxp[s, 2 * i + w // 2, 2 * j + w % 2, ch] += g[s, i, j, ch]
    return dxp
