"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array. While a ``tape()`` context is active, every
operation whose inputs require gradients appends a node (inputs, saved
activations, vector-Jacobian product) to the tape; ``backward(loss)`` walks
the tape once in reverse append order and returns a ``GradMap``. The graph is
acyclic by construction (a node only references tensors that already exist)
and is freed when consumed, so there are no higher-order gradients.

Gradient conventions:
  - fan-out accumulates additively,
  - broadcasting is undone by summing over the broadcast axes,
  - parameters never touched by the loss read back as zeros from the GradMap.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special as _sp

from .errors import NoGraphError, ShapeError

Array = np.ndarray


class Node:
    __slots__ = ("inputs", "vjp", "out", "tape")

    def __init__(self, inputs: tuple["Tensor", ...], vjp: Callable, out: "Tensor", tape: "Tape"):
        self.inputs = inputs
        self.vjp = vjp
        self.out = out
        self.tape = tape


class Tape:
    """Append-only record of one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False


_ACTIVE: list[Tape] = []


@contextlib.contextmanager
def tape():
    """Enable gradient recording for the enclosed forward pass."""
    t = Tape()
    _ACTIVE.append(t)
    try:
        yield t
    finally:
        _ACTIVE.pop()


def recording() -> bool:
    return bool(_ACTIVE)


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "version")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.version = 0  # bumped by assign(); lets caches detect stale values

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> Array:
        return self.data

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def assign(self, data: Array) -> None:
        """Replace the stored values in place (parameter update between steps)."""
        arr = np.asarray(data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ShapeError(f"assign shape {arr.shape} != {self.data.shape}")
        self.data = arr
        self.version += 1

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return _ew_binary("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _ew_binary("sub", self, other)

    def __rsub__(self, other):
        return _ew_binary("sub", _coerce(other, self.dtype), self)

    def __mul__(self, other):
        return _ew_binary("mul", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _ew_binary("div", self, other)

    def __rtruediv__(self, other):
        return _ew_binary("div", _coerce(other, self.dtype), self)

    def __neg__(self):
        return apply_op(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops ------------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        try:
            out = self.data.reshape(shape)
        except ValueError as e:
            raise ShapeError(str(e)) from None
        return apply_op(out, (self,), lambda g: (g.reshape(old),))

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        return apply_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    def swap_last(self) -> "Tensor":
        """Swap the two trailing axes (matrix transpose of each batch slice)."""
        return apply_op(np.swapaxes(self.data, -1, -2), (self,),
                        lambda g: (np.swapaxes(g, -1, -2),))

    # -- reductions -----------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).astype(g.dtype, copy=False),)
            ax = axis if isinstance(axis, tuple) else (axis,)
            gg = g if keepdims else np.expand_dims(g, ax)
            return (np.broadcast_to(gg, shape),)

        return apply_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape
        if axis is None:
            count = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([shape[a] for a in ax]))

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g / count, shape).astype(g.dtype, copy=False),)
            ax = axis if isinstance(axis, tuple) else (axis,)
            gg = g if keepdims else np.expand_dims(g, ax)
            return (np.broadcast_to(gg / count, shape),)

        return apply_op(self.data.mean(axis=axis, keepdims=keepdims), (self,), vjp)


# -- graph plumbing -------------------------------------------------------

def apply_op(out_data: Array, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    """Wrap a computed forward result, recording a tape node when needed.

    ``vjp(grad_out)`` must return one gradient array (or None) per input,
    each already reduced to that input's shape.
    """
    out = Tensor(out_data)
    if _ACTIVE and any(t.requires_grad for t in inputs):
        t = _ACTIVE[-1]
        out.requires_grad = True
        node = Node(inputs, vjp, out, t)
        out.node = node
        t.nodes.append(node)
    return out


def backward(loss: Tensor) -> "GradMap":
    """Run one reverse pass from a scalar loss; frees the tape afterwards."""
    if loss.node is None:
        raise NoGraphError("backward() on a detached tensor (no recorded graph)")
    tp = loss.node.tape
    if tp.consumed:
        raise NoGraphError("this graph was already consumed by a backward pass")
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tp.consumed = True

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tp.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            prev = grads.get(id(inp))
            grads[id(inp)] = gi if prev is None else prev + gi
    # free saved activations now: Node.out <-> Tensor.node is a reference
    # cycle, and numpy buffers don't nudge the gc, so sever it explicitly
    for node in tp.nodes:
        node.out.node = None
        node.inputs = ()
        node.vjp = None
    tp.nodes.clear()
    return GradMap(grads)


class GradMap:
    """Gradients keyed by parameter; absent parameters read as zeros."""

    def __init__(self, grads: dict[int, Array]):
        self._grads = grads

    def get(self, t: Tensor) -> Array:
        g = self._grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _ew_binary(op: str, a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    b = _coerce(b, a.dtype)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None
    ad, bd = a.data, b.data
    if op == "add":
        out = ad + bd
        vjp = lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape))
    elif op == "sub":
        out = ad - bd
        vjp = lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape))
    elif op == "mul":
        out = ad * bd
        vjp = lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    elif op == "div":
        out = ad / bd
        vjp = lambda g: (_unbroadcast(g / bd, ad.shape),
                         _unbroadcast(-g * ad / (bd * bd), bd.shape))
    else:  # pragma: no cover
        raise ValueError(op)
    return apply_op(out, (a, b), vjp)


# -- constructors ----------------------------------------------------------

_META_ALLOC = False


@contextlib.contextmanager
def meta_alloc():
    """Allocate shape-true but storage-free tensors (zero-stride views).

    Used to enumerate the parameter manifest of models too large to hold in
    memory; such tensors must never be written to.
    """
    global _META_ALLOC
    _META_ALLOC = True
    try:
        yield
    finally:
        _META_ALLOC = False


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be >= 1, got {shape}")
    return shape


def _filled(shape, value, dtype):
    if _META_ALLOC:
        return np.broadcast_to(np.asarray(value, dtype=dtype), shape)
    return np.full(shape, value, dtype=dtype)


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(_filled(_check_shape(shape), 0, dtype), requires_grad)


def ones(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(_filled(_check_shape(shape), 1, dtype), requires_grad)


def full(shape, value: float, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(_filled(_check_shape(shape), value, dtype), requires_grad)


def trunc_normal(shape, std: float, rng, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    """Normal(0, std) clamped at +-2 std; `rng` is a seed or numpy Generator."""
    shape = _check_shape(shape)
    if _META_ALLOC:
        return Tensor(_filled(shape, 0, dtype), requires_grad)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    vals = rng.normal(0.0, std, size=shape)
    np.clip(vals, -2.0 * std, 2.0 * std, out=vals)
    return Tensor(vals.astype(dtype), requires_grad)


def from_values(values, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(values, dtype=dtype), requires_grad)


# -- math ops ---------------------------------------------------------------

def matmul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    if bd.ndim == 2:
        # x @ W: collapse the leading dims into one GEMM (the batched-matmul
        # route runs one tiny GEMM per leading index and crawls)
        k, n = bd.shape
        a2 = np.ascontiguousarray(ad).reshape(-1, k)
        out = (a2 @ bd).reshape(ad.shape[:-1] + (n,))

        def vjp(g):
            g2 = np.ascontiguousarray(g).reshape(-1, n)
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = a2.T @ g2
            return ga, gb

        return apply_op(out, (a, b), vjp)

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.ascontiguousarray(np.swapaxes(ad, -1, -2)) @ g, bd.shape)
        return ga, gb

    return apply_op(ad @ bd, (a, b), vjp)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return apply_op(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return apply_op(out, (x,), lambda g: (g / (2.0 * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = _sp.expit(x.data)
    return apply_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form x * Phi(x)."""
    from . import kernels  # late import: kernels never imports tensor
    xd = np.ascontiguousarray(x.data)
    out, phi = kernels.gelu_fwd(xd)

    def vjp(g):
        return (kernels.gelu_bwd(xd, phi, np.ascontiguousarray(g)),)

    return apply_op(out, (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if not -xd.ndim <= axis < xd.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return apply_op(out, (x,), vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    z = xd - xd.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return apply_op(out, (x,), vjp)


def take(x: Tensor, indices: Array, axis: int) -> Tensor:
    """Differentiable gather along one axis; backward scatter-adds."""
    idx = np.asarray(indices)
    out = np.take(x.data, idx, axis=axis)
    shape = x.data.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        # np.take puts the idx dims where `axis` was; move them (and the
        # scattered axis) to the front so np.add.at lines up.
        gxm = np.moveaxis(gx, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        np.add.at(gxm, idx, gm)
        return (gx,)

    return apply_op(out, (x,), vjp)


def finite_diff(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4) -> Array:
    """Central-difference gradient oracle, evaluated coordinate by coordinate.

    `f` maps a Tensor to a scalar (Tensor or float). Use 64-bit inputs:
    32-bit differences are dominated by rounding.
    """
    base = x.data.astype(np.float64).copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = base[i]
        base[i] = orig + eps
        fp = f(Tensor(base.copy(), dtype=np.float64))
        base[i] = orig - eps
        fm = f(Tensor(base.copy(), dtype=np.float64))
        base[i] = orig
        fp = fp.item() if isinstance(fp, Tensor) else float(fp)
        fm = fm.item() if isinstance(fm, Tensor) else float(fm)
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad


def parameters_of(named: Iterable[tuple[str, Tensor]]) -> list[tuple[str, Tensor]]:
    return [(n, t) for n, t in named if t.requires_grad]
