"""Finite-difference verification of every backward rule.

Central differences in float64 against the taped gradients. The error
reported per unit is max|analytic - numeric| normalized by the gradient's
overall magnitude, so sign changes near zero do not blow up the ratio.
Op- and block-scope checks sweep every coordinate; the model scope samples
a deterministic subset per tensor (a full sweep of the tiny model would be
~10^6 forward passes).
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .blocks import ConvBlock, MBConvBlock, MBConvCfg, TfmCfg, TransformerBlock
from .config import ModelConfig, StageSpec
from .model import build_model
from .ops import (ConvParams, NormParams, conv2d, global_avg_pool, max_pool2d,
                  norm, squeeze_excite)
from .tensor import (Tensor, backward, exp, gelu, log, log_softmax, matmul,
                     ones, sigmoid, softmax, sqrt, take, tape, zeros)

TOLERANCE = 1e-3
EPS = 1e-4


class Mixer:
    """Fixed random projection of an op's output to a scalar, so every output
    coordinate influences the checked loss. Weights freeze on first use,
    keeping f deterministic across the finite-difference evaluations."""

    def __init__(self, rng):
        self._rng = rng
        self._w = None

    def __call__(self, out: Tensor) -> Tensor:
        if self._w is None:
            self._w = Tensor(self._rng.standard_normal(out.shape), dtype=np.float64)
        return (out * self._w).sum()


def check_function(f: Callable[[], Tensor], wrt: Iterable[tuple[str, Tensor]],
                   eps: float = EPS, max_coords: int | None = None,
                   seed: int = 0) -> float:
    """Max normalized error between taped and central-difference gradients
    of scalar f() w.r.t. each listed float64 tensor."""
    wrt = list(wrt)
    with tape():
        loss = f()
    gm = backward(loss)
    worst = 0.0
    rng = np.random.default_rng(seed)
    for _, t in wrt:
        if not t.requires_grad:
            continue
        analytic = gm.get(t)
        flat = t.data.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if max_coords is None or n <= max_coords
                  else np.sort(rng.choice(n, size=max_coords, replace=False)))
        numeric = np.zeros(len(coords))
        for out_i, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            numeric[out_i] = (fp - fm) / (2.0 * eps)
        sampled = analytic.reshape(-1)[coords]
        denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-10)
        worst = max(worst, float(np.abs(sampled - numeric).max() / denom))
    return worst


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64, requires_grad=True)


def op_suite(seed: int = 0) -> list[tuple[str, float]]:
    rng = np.random.default_rng(seed)
    results = []

    def run(name, op, *tensors):
        mix = Mixer(rng)
        named = [(f"t{i}", t) for i, t in enumerate(tensors)]
        results.append((name, check_function(lambda: mix(op()), named)))

    a, b = _rand(rng, 4, 3), _rand(rng, 3, 5)
    run("matmul", lambda: matmul(a, b), a, b)

    x, y = _rand(rng, 3, 4), _rand(rng, 4)  # broadcast on purpose
    run("add", lambda: x + y, x, y)
    run("mul", lambda: x * y, x, y)
    yd = Tensor(rng.standard_normal(4) + 3.0, dtype=np.float64, requires_grad=True)
    run("div", lambda: x / yd, x, yd)

    u = _rand(rng, 6)
    run("exp", lambda: exp(u), u)
    up = Tensor(np.abs(rng.standard_normal(6)) + 0.5, dtype=np.float64, requires_grad=True)
    run("log", lambda: log(up), up)
    run("sqrt", lambda: sqrt(up), up)
    run("sigmoid", lambda: sigmoid(u), u)
    run("gelu", lambda: gelu(u), u)

    s = _rand(rng, 2, 5)
    run("softmax", lambda: softmax(s, axis=-1), s)
    run("log_softmax", lambda: log_softmax(s, axis=-1), s)

    tk = _rand(rng, 2, 7)
    idx = np.array([[0, 3, 3], [6, 1, 0]])
    run("take", lambda: take(tk, idx, axis=1), tk)

    r = _rand(rng, 2, 3, 4)
    run("reshape", lambda: r.reshape(6, 4), r)
    run("transpose", lambda: r.transpose((2, 0, 1)), r)
    run("mean", lambda: r.mean(axis=(0, 2)), r)

    for stride in (1, 2):
        xc = _rand(rng, 2, 5, 5, 3)
        k = _rand(rng, 3, 3, 3, 4)
        bias = _rand(rng, 4)
        p = ConvParams(kernel=k, bias=bias, stride=stride)
        run(f"conv2d_s{stride}", lambda p=p, xc=xc: conv2d(xc, p), xc, k, bias)
        xd = _rand(rng, 2, 5, 5, 4)
        kd = _rand(rng, 3, 3, 1, 4)
        bd = _rand(rng, 4)
        pd = ConvParams(kernel=kd, bias=bd, stride=stride, groups=4)
        run(f"depthwise_s{stride}", lambda pd=pd, xd=xd: conv2d(xd, pd), xd, kd, bd)
    xv = _rand(rng, 1, 5, 5, 2)
    kv = _rand(rng, 3, 3, 2, 3)
    pv = ConvParams(kernel=kv, bias=None, padding="valid")
    run("conv2d_valid", lambda: conv2d(xv, pv), xv, kv)
    xg = _rand(rng, 1, 4, 4, 6)
    kg = _rand(rng, 3, 3, 3, 4)
    pg = ConvParams(kernel=kg, bias=None, groups=2)
    run("grouped_conv2d", lambda: conv2d(xg, pg), xg, kg)

    for h in (4, 5):
        xp = _rand(rng, 2, h, h, 3)
        run(f"max_pool_{h}x{h}", lambda xp=xp: max_pool2d(xp), xp)

    xn = _rand(rng, 2, 3, 3, 4)
    for kind in ("batch", "layer"):
        g = _rand(rng, 4)
        bb = _rand(rng, 4)
        p = NormParams(kind=kind, gamma=g, beta=bb)
        if kind == "batch":
            p.running_mean = zeros((4,), dtype=np.float64)
            p.running_var = ones((4,), dtype=np.float64)
        run(f"{kind}_norm", lambda p=p: norm(xn, p, training=True), xn, g, bb)

    xs = _rand(rng, 2, 3, 3, 8)
    w1, w2 = _rand(rng, 8, 2), _rand(rng, 2, 8)
    run("squeeze_excite", lambda: squeeze_excite(xs, w1, w2), xs, w1, w2)
    run("global_avg_pool", lambda: global_avg_pool(xs), xs)
    return results


def block_suite(seed: int = 0) -> list[tuple[str, float]]:
    rng = np.random.default_rng(seed)
    results = []

    for variant in ("proj_pool", "strided_dwconv"):
        for norm_kind in ("batch", "layer"):
            for stride in (1, 2):
                cfg = MBConvCfg(d_in=4, d_out=8 if stride == 2 else 4, stride=stride,
                                downsample_variant=variant, norm_kind=norm_kind)
                blk = MBConvBlock(cfg, rng, dtype=np.float64)
                x = _rand(rng, 2, 4, 4, 4)
                mix = Mixer(rng)
                wrt = [("x", x)] + list(blk.named_tensors())
                name = f"mbconv_{variant}_{norm_kind}_s{stride}"
                results.append((name, check_function(
                    lambda blk=blk, x=x, mix=mix: mix(blk.forward(x, training=True)), wrt)))

    for mode in ("pre", "post", "none"):
        for stride in (1, 2):
            cfg = TfmCfg(d_in=4, d_out=8 if stride == 2 else 4, head_dim=2,
                         stride=stride, attn_mode=mode)
            grid = 2 if stride == 2 else 4
            blk = TransformerBlock(cfg, grid, grid, rng, dtype=np.float64)
            if blk.bias_table is not None:  # nonzero so 'post' exercises the bias path
                blk.bias_table.table.data[:] = 0.1 * rng.standard_normal(
                    blk.bias_table.table.shape)
            x = _rand(rng, 2, 4, 4, 4)
            mix = Mixer(rng)
            wrt = [("x", x)] + list(blk.named_tensors())
            results.append((f"tfm_{mode}_s{stride}", check_function(
                lambda blk=blk, x=x, mix=mix: mix(blk.forward(x, training=True)), wrt)))

    blk = ConvBlock(3, 6, 2, "batch", rng, dtype=np.float64)
    x = _rand(rng, 2, 4, 4, 3)
    mix = Mixer(rng)
    wrt = [("x", x)] + list(blk.named_tensors())
    results.append(("conv_block_s2", check_function(
        lambda: mix(blk.forward(x, training=True)), wrt)))
    return results


def model_suite(seed: int = 0, max_coords: int = 6) -> list[tuple[str, float]]:
    """End-to-end check of a tiny-shaped model, sampled coordinates per tensor."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        stem=StageSpec("conv", 2, 8),
        stages=((StageSpec("mbconv", 1, 8),), (StageSpec("mbconv", 1, 8),),
                (StageSpec("tfm_rel", 2, 16),), (StageSpec("tfm_rel", 1, 16),)),
        num_classes=4, resolution=32, head_dim=8)
    model = build_model(cfg, seed=seed, dtype=np.float64)
    for _, t in model.parameters():  # move bias tables off their zero init
        if t.ndim == 3:
            t.data[:] = 0.05 * rng.standard_normal(t.shape)
    x = Tensor(rng.standard_normal((2, 32, 32, 3)), dtype=np.float64, requires_grad=True)
    mix = Mixer(rng)
    wrt = [("input", x)] + model.parameters()
    err = check_function(lambda: mix(model.forward(x, training=True)), wrt,
                         max_coords=max_coords, seed=seed)
    return [("tiny_end_to_end", err)]


def run_scope(scope: str, seed: int = 0) -> list[tuple[str, float]]:
    if scope == "op":
        return op_suite(seed)
    if scope == "block":
        return block_suite(seed)
    if scope == "model":
        return model_suite(seed)
    raise ValueError(f"unknown gradcheck scope {scope!r}")
