import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lindlearn import _kernels

settings.register_profile("lindlearn", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lindlearn")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def numpy_backend():
    """Run the test body with the pure-numpy kernels bound."""
    _kernels._bind(False)
    try:
        yield
    finally:
        _kernels._bind(_kernels.USE_NUMBA)


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)
