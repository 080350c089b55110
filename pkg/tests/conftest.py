import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hbae.forward.polynomial import LinearModel
from hbae.oracle import curve_fit_problem

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def curve_fit():
    """The quadratic curve-fit problem, its truth and its sample points."""
    return curve_fit_problem()


@pytest.fixture(scope="session")
def poly_models(curve_fit):
    problem, _, _ = curve_fit
    return LinearModel(problem.F), LinearModel(problem.G)
