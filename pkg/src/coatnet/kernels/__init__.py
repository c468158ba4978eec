"""Hot spatial kernels with selectable backends.

Two interchangeable implementations of the loop-bound kernels (grouped /
depthwise convolution forward+backward, 2x2 max-pool forward+backward):

  - ``numba_backend``: @njit loops, the fast path on CPU;
  - ``numpy_backend``: vectorized pure numpy, always available.

Selection: env var ``COATNET_KERNELS`` in {auto (default), numba, numpy},
read once at import; ``set_backend()`` overrides at runtime (used by tests
and by ``benchmarks/bench_kernels.py``). Dense (groups == 1) convolutions do
not live here: im2col + BLAS matmul beats explicit loops for those on every
shape we measured, so both backends share that path in ``ops``.
"""

from __future__ import annotations

import os

from . import numpy_backend

_impl = numpy_backend
_name = "numpy"


def set_backend(name: str) -> str:
    """Select 'numba' or 'numpy' ('auto' prefers numba). Returns the choice."""
    global _impl, _name
    if name == "numpy":
        _impl, _name = numpy_backend, "numpy"
    elif name in ("numba", "auto"):
        try:
            from . import numba_backend
        except ImportError:
            if name == "numba":
                raise
            _impl, _name = numpy_backend, "numpy"
        else:
            _impl, _name = numba_backend, "numba"
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return _name


def backend_name() -> str:
    return _name


def conv_fwd(xp, k, stride, ho, wo, groups):
    return _impl.conv_fwd(xp, k, stride, ho, wo, groups)


def conv_bwd_input(g, k, stride, hp, wp, groups):
    return _impl.conv_bwd_input(g, k, stride, hp, wp, groups)


def conv_bwd_kernel(xp, g, stride, kh, kw, groups):
    return _impl.conv_bwd_kernel(xp, g, stride, kh, kw, groups)


def pool_fwd(xp, ho, wo):
    return _impl.pool_fwd(xp, ho, wo)


def pool_bwd(g, arg, hp, wp):
    return _impl.pool_bwd(g, arg, hp, wp)


def gelu_fwd(x):
    return _impl.gelu_fwd(x)


def gelu_bwd(x, phi, g):
    return _impl.gelu_bwd(x, phi, g)


set_backend(os.environ.get("COATNET_KERNELS", "auto"))
