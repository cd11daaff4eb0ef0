import numpy as np
import pytest

from fvddp.filtering import advance_time, init_state, update_batch
from fvddp.measures import BaseMeasure, FiniteUniformP0


def two_time_state(p0, theta=1.0, sigma=1.0, gap=1.0):
    """The canonical two-time, two-value example: observe (0, 1) twice with
    one time unit in between.  Active set {(1,1),(2,1),(1,2),(2,2)}."""
    state = init_state(BaseMeasure(theta, p0), sigma)
    state = update_batch(state, [0, 1])
    state = advance_time(state, gap)
    return update_batch(state, [0, 1])


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture
def fig1_state():
    """Two-time example over a small uniform baseline."""
    return two_time_state(FiniteUniformP0(range(10)))


@pytest.fixture
def fig1_diffuse():
    """Two-time example over a near-diffuse baseline (atom mass 1e-6), so
    baseline collisions are negligible for partition-law comparisons."""
    return two_time_state(FiniteUniformP0(range(1_000_000)))
