import numpy as np
import pytest

from coatnet import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(params=["numba", "numpy"])
def each_backend(request):
    """Run a test under both kernel backends, restoring the default after."""
    before = kernels.backend_name()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(before)
