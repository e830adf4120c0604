import numpy as np
import pytest

from seqstop import GbmParams, PayoffSpec, StoppingProblem


@pytest.fixture
def table1_problem():
    """The 1-d at-the-money put benchmark instance (25 exercise dates)."""
    model = GbmParams(spot=40.0, rate=0.06, vol=0.2, dim=1)
    payoff = PayoffSpec(kind="put-1d", strike=40.0, rate=0.06, step_years=0.04)
    return StoppingProblem(model=model, payoff=payoff, horizon=25, step_years=0.04)


@pytest.fixture
def basket2d_problem():
    model = GbmParams(spot=40.0, rate=0.06, vol=0.2, dim=2)
    payoff = PayoffSpec(kind="basket-put", strike=40.0, rate=0.06, step_years=0.04)
    return StoppingProblem(model=model, payoff=payoff, horizon=25, step_years=0.04)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
