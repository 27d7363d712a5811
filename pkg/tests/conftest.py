import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nbvkit.shapes import icosphere

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def unit_sphere():
    return icosphere(5, 1.0)


@pytest.fixture(scope="session")
def coarse_sphere():
    return icosphere(3, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
