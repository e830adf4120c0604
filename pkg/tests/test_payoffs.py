import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqstop import PayoffSpec, payoff


@pytest.fixture
def put():
    return PayoffSpec(kind="put-1d", strike=40.0, rate=0.06, step_years=1.0)


def test_at_the_money_is_worthless(put):
    assert payoff(put, 3, np.array([40.0])) == 0.0


def test_no_discount_at_time_zero(put):
    assert payoff(put, 0, np.array([36.0])) == pytest.approx(4.0)


def test_discount_factor(put):
    assert payoff(put, 1, np.array([36.0])) == pytest.approx(4.0 * math.exp(-0.06), abs=5e-5)


def test_basket_uses_mean():
    spec = PayoffSpec(kind="basket-put", strike=40.0, rate=0.0, step_years=1.0)
    assert payoff(spec, 0, np.array([30.0, 40.0])) == pytest.approx(5.0)


def test_geometric_uses_product():
    spec = PayoffSpec(kind="geometric-put", strike=1.0, rate=0.0, step_years=1.0)
    assert payoff(spec, 0, np.array([0.9, 0.9])) == pytest.approx(1.0 - 0.81)


def test_sv_put_reads_price_coordinate():
    spec = PayoffSpec(kind="sv-put", strike=23.0, rate=0.0, step_years=1 / 252)
    assert payoff(spec, 0, np.array([20.0, -0.7])) == pytest.approx(3.0)


def test_dimension_mismatch_rejected(put):
    with pytest.raises(ValueError):
        payoff(put, 0, np.array([40.0, 40.0]))
    sv = PayoffSpec(kind="sv-put", strike=23.0, rate=0.0, step_years=1.0)
    with pytest.raises(ValueError):
        payoff(sv, 0, np.array([20.0]))


def test_batch_evaluation(put):
    vals = payoff(put, 0, np.array([[30.0], [40.0], [50.0]]))
    assert vals.tolist() == [10.0, 0.0, 0.0]


@given(
    s=st.floats(min_value=0.01, max_value=200.0),
    t=st.integers(min_value=0, max_value=30),
)
def test_nonnegative_and_zero_above_strike(s, t):
    spec = PayoffSpec(kind="put-1d", strike=40.0, rate=0.06, step_years=0.04)
    val = payoff(spec, t, np.array([s]))
    assert val >= 0.0
    if s >= 40.0:
        assert val == 0.0


@given(
    s=st.floats(min_value=1.0, max_value=39.0),
    bump=st.floats(min_value=0.01, max_value=10.0),
    t=st.integers(min_value=0, max_value=24),
)
def test_monotone_in_price_and_time(s, bump, t):
    spec = PayoffSpec(kind="put-1d", strike=40.0, rate=0.06, step_years=0.04)
    assert payoff(spec, t, np.array([s + bump])) <= payoff(spec, t, np.array([s]))
    assert payoff(spec, t + 1, np.array([s])) <= payoff(spec, t, np.array([s]))
