import numpy as np
import pytest

from stackelberg_lq import ADVERTISING_DEFAULTS, TimeGrid, from_advertising
from stackelberg_lq.feedback import solve_offline


@pytest.fixture(scope="session")
def adv_model():
    return from_advertising(ADVERTISING_DEFAULTS)


@pytest.fixture(scope="session")
def grid200():
    return TimeGrid(1.0, 200)


@pytest.fixture(scope="session")
def adv_offline(adv_model, grid200):
    return solve_offline(adv_model, grid200)


def zero_params(**overrides):
    p = {k: 0.0 for k in ADVERTISING_DEFAULTS}
    p.update(mu1=1.0, mu2=1.0)
    p.update(overrides)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
