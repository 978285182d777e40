import numpy as np
import pytest

from oswcal.model import ModelParams, init_state


@pytest.fixture
def det_params():
    return ModelParams(num_regions=3, population=(1000, 2000, 1500), stochastic=False)


@pytest.fixture
def sto_params():
    return ModelParams(num_regions=3, population=(1000, 2000, 1500), stochastic=True)


@pytest.fixture
def det_state(det_params):
    return init_state(det_params, [10, 40, 0], seed=1)


@pytest.fixture
def sto_state(sto_params):
    return init_state(sto_params, [10, 40, 0], seed=1)


def const_schedule(n_weeks, n_regions, mu=0.5):
    return np.full((n_weeks, n_regions), mu)
