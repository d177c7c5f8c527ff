import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vribaucour.geomgrid import Grid

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def quiet():
    """Silence the expected 'v_i vanish' warnings of degenerate regions."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def small_grid2():
    return Grid.cube(2, 0.5, 0.02)
