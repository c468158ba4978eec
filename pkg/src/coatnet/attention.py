"""Multi-head self-attention over a 2D grid with a trainable relative bias.

Each head owns a (2H-1) x (2W-1) table holding one scalar per possible
relative offset between two grid positions. The bias for query (i, j) and
key (i', j') is table[i-i'+H, j-j'+W] under 1-based indexing, fetched with a
single gather (pure indexing, no arithmetic), so it is exactly translation
equivariant by construction. The bias can be added to the attention logits
before the softmax (mode "pre", the default) or to the normalized weights
after it (mode "post"); "none" is vanilla attention for ablations.

Logits are scaled by 1/sqrt(head_dim); the zero-initialized table therefore
makes a fresh model exactly a vanilla-attention network.

Tables are per-layer (never shared) and unbucketed. For evaluation at a
larger resolution the table is enlarged with corner-aligned bilinear
interpolation.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import ResolutionError, ShapeError
from .tensor import Tensor, matmul, recording, softmax, take, zeros

__all__ = ["RelBiasTable", "AttnParams", "init_bias_table", "gather_bias",
           "relative_mhsa", "interpolate_bias"]


@dataclass
class RelBiasTable:
    table: Tensor   # [heads, 2*base_h - 1, 2*base_w - 1], trainable
    base_h: int
    base_w: int
    _cache: dict = field(default_factory=dict, repr=False)  # eval-mode gathers

    @property
    def heads(self) -> int:
        return self.table.shape[0]


@dataclass
class AttnParams:
    heads: int
    head_dim: int
    wq: Tensor  # [d_in, heads*head_dim]
    wk: Tensor
    wv: Tensor
    wo: Tensor  # [heads*head_dim, d_out]


def init_bias_table(h: int, w: int, heads: int, dtype=np.float32) -> RelBiasTable:
    if h < 1 or w < 1 or heads < 1:
        raise ShapeError(f"bias table needs positive extents, got H={h} W={w} heads={heads}")
    t = zeros((heads, 2 * h - 1, 2 * w - 1), dtype=dtype, requires_grad=True)
    return RelBiasTable(t, h, w)


@functools.lru_cache(maxsize=None)
def _offset_index(h: int, w: int) -> np.ndarray:
    """Flat [H*W, H*W] index into a flattened (2H-1)x(2W-1) table."""
    ii, jj = np.divmod(np.arange(h * w), w)
    rows = ii[:, None] - ii[None, :] + (h - 1)
    cols = jj[:, None] - jj[None, :] + (w - 1)
    return rows * (2 * w - 1) + cols


def gather_bias(t: RelBiasTable, h: int, w: int, training: bool = True) -> Tensor:
    """Bias matrix [heads, H*W, H*W] for the given grid.

    Train mode re-gathers every call (the table is changing); eval mode
    caches the gathered matrix per grid until the table values change.
    """
    if (h, w) != (t.base_h, t.base_w):
        raise ResolutionError(
            f"bias table was built for a {t.base_h}x{t.base_w} grid, got {h}x{w}; "
            "run interpolate_bias / adapt_resolution first")
    idx = _offset_index(h, w)
    if not training and not recording():
        key = (h, w, t.table.version)
        hit = t._cache.get(key)
        if hit is None:
            flat = t.table.data.reshape(t.heads, -1)
            hit = Tensor(np.take(flat, idx, axis=1))
            t._cache.clear()
            t._cache[key] = hit
        return hit
    flat = t.table.reshape(t.heads, (2 * h - 1) * (2 * w - 1))
    return take(flat, idx, axis=1)


def relative_mhsa(x: Tensor, p: AttnParams, t: RelBiasTable | None,
                  mode: str = "pre", training: bool = True) -> Tensor:
    if mode not in ("pre", "post", "none"):
        raise ShapeError(f"unknown attention mode {mode!r}")
    n, h, w, d = x.shape
    if p.wq.shape[0] != d:
        raise ShapeError(f"attention expects {p.wq.shape[0]} channels, got {d}")
    m = p.heads * p.head_dim
    if p.wq.shape[1] != m or p.wo.shape[0] != m:
        raise ShapeError("projection widths disagree with heads*head_dim")
    tokens = h * w

    xt = x.reshape(n, tokens, d)
    def split(proj):
        return matmul(xt, proj).reshape(n, tokens, p.heads, p.head_dim).transpose((0, 2, 1, 3))
    q, k, v = split(p.wq), split(p.wk), split(p.wv)

    logits = matmul(q, k.swap_last()) * (1.0 / np.sqrt(p.head_dim))
    if mode == "pre":
        logits = logits + gather_bias(t, h, w, training)
    weights = softmax(logits, axis=-1)
    if mode == "post":
        weights = weights + gather_bias(t, h, w, training)
    ctx = matmul(weights, v)                       # [N, heads, T, head_dim]
    ctx = ctx.transpose((0, 2, 1, 3)).reshape(n, tokens, m)
    out = matmul(ctx, p.wo)
    return out.reshape(n, h, w, p.wo.shape[1])


def interpolate_bias(t: RelBiasTable, new_h: int, new_w: int) -> RelBiasTable:
    """Enlarge the per-head table to a (2H'-1) x (2W'-1) grid.

    Corner-aligned bilinear: the four extreme relative offsets map exactly
    onto the corners of the resized table. Identity when the size is
    unchanged; shrinking is not supported.
    """
    if new_h < t.base_h or new_w < t.base_w:
        raise ResolutionError(
            f"bias tables only grow: {t.base_h}x{t.base_w} -> {new_h}x{new_w} requested")
    if (new_h, new_w) == (t.base_h, t.base_w):
        fresh = Tensor(t.table.data.copy(), requires_grad=True)
        return RelBiasTable(fresh, t.base_h, t.base_w)
    src = t.table.data
    eh, ew = 2 * new_h - 1, 2 * new_w - 1
    rows = _axis_lerp(src, eh, axis=1)
    grown = _axis_lerp(rows, ew, axis=2)
    return RelBiasTable(Tensor(grown.astype(src.dtype), requires_grad=True), new_h, new_w)


def _axis_lerp(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = arr.shape[axis]
    if out_len == in_len:
        return arr
    pos = (np.arange(out_len, dtype=np.float64) * (in_len - 1) / (out_len - 1)
           if out_len > 1 else np.zeros(1))
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, in_len - 1)
    frac = pos - lo
    a = np.take(arr, lo, axis=axis).astype(np.float64)
    b = np.take(arr, hi, axis=axis).astype(np.float64)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac
