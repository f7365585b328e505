import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def linear1d():
    from yyfilter.models import builtin_model

    return builtin_model("linear1d")


@pytest.fixture(scope="session")
def grid_1d_fine():
    from yyfilter.pde import build_grid

    return build_grid(1, 6.0, 241)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
