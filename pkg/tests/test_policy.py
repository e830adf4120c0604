import math

import numpy as np
import pytest

from seqstop import (
    ClassifierStack,
    ConstantRule,
    GbmParams,
    PayoffSpec,
    StoppingProblem,
    ThresholdRule,
    black_scholes_put,
    forward_stop,
    payoff,
    sample_timing_batch,
)
from seqstop.policy import ALWAYS_STOP, NEVER_STOP


def never_stop_stack(horizon):
    stack = ClassifierStack(horizon)
    for t in range(1, horizon):
        stack.set_rule(t, NEVER_STOP)
    return stack


def test_empty_stopping_sets_run_to_horizon(table1_problem, rng):
    stack = never_stop_stack(25)
    sites = np.full((200, 1), 40.0)
    batch = sample_timing_batch(table1_problem, stack, 0, sites, rng)
    assert np.all(batch.taus == 25)
    assert np.all(batch.steps_used == 25)


def test_full_stopping_set_stops_immediately(table1_problem, rng):
    stack = ClassifierStack(25)
    for t in range(1, 25):
        stack.set_rule(t, ALWAYS_STOP)
    pay, tau, steps = forward_stop(table1_problem, stack, 3, np.array([40.0]), rng)
    assert tau == 4 and steps == 1


def test_deterministic_path_stops_at_first_step(rng):
    # vol 0: the price grows along exp(r t); ITM put should stop at once
    model = GbmParams(spot=36.0, rate=0.06, vol=0.0, dim=1)
    spec = PayoffSpec(kind="put-1d", strike=40.0, rate=0.06, step_years=0.04)
    problem = StoppingProblem(model=model, payoff=spec, horizon=25, step_years=0.04)
    stack = ClassifierStack(25)
    for t in range(1, 25):
        stack.set_rule(t, ThresholdRule(40.0))  # stop as soon as below strike
    pay, tau, steps = forward_stop(problem, stack, 0, np.array([36.0]), rng)
    assert tau == 1
    expected = math.exp(-0.06 * 0.04) * (40.0 - 36.0 * math.exp(0.06 * 0.04))
    assert pay == pytest.approx(expected, abs=1e-12)


def test_forced_horizon_matches_definition(table1_problem, rng):
    stack = never_stop_stack(25)
    sites = np.full((500, 1), 38.0)
    batch = sample_timing_batch(table1_problem, stack, 20, sites, rng)
    assert np.all(batch.responses >= -payoff(table1_problem.payoff, 20, np.array([38.0])) - 1e-12)
    assert np.all(batch.taus >= 21)


def test_zero_noise_gives_identical_samples(rng):
    model = GbmParams(spot=36.0, rate=0.06, vol=0.0, dim=1)
    spec = PayoffSpec(kind="put-1d", strike=40.0, rate=0.06, step_years=0.04)
    problem = StoppingProblem(model=model, payoff=spec, horizon=10, step_years=0.04)
    stack = never_stop_stack(10)
    sites = np.full((50, 1), 36.0)
    batch = sample_timing_batch(problem, stack, 0, sites, rng)
    assert np.unique(batch.responses).size == 1


def test_response_bounds_for_puts(table1_problem, rng):
    stack = never_stop_stack(25)
    sites = np.exp(rng.uniform(np.log(25), np.log(70), size=(2000, 1)))
    t = 5
    batch = sample_timing_batch(table1_problem, stack, t, sites, rng)
    h_t = payoff(table1_problem.payoff, t, sites)
    upper = math.exp(-0.06 * t * 0.04) * 40.0
    assert np.all(batch.responses >= -h_t - 1e-12)
    assert np.all(batch.responses <= upper + 1e-12)


def test_always_stop_at_horizon_recovers_european(table1_problem, rng):
    stack = never_stop_stack(25)
    sites = np.full((50_000, 1), 40.0)
    batch = sample_timing_batch(table1_problem, stack, 0, sites, rng)
    mean = batch.responses.mean() + payoff(table1_problem.payoff, 0, np.array([40.0]))
    se = batch.responses.std(ddof=1) / math.sqrt(len(batch))
    european = black_scholes_put(40.0, 40.0, 0.06, 0.2, 1.0)
    assert abs(mean - european) < 3 * se


def test_timing_mean_matches_lattice(table1_problem, rng):
    from seqstop import binomial_oracle, oracle_timing_value

    oracle = binomial_oracle(table1_problem, 80)
    stack = oracle.stack(25)
    sites = np.full((100_000, 1), 35.0)
    t = 20  # physical time 0.8
    batch = sample_timing_batch(table1_problem, stack, t, sites, rng)
    se = batch.responses.std(ddof=1) / math.sqrt(len(batch))
    target = oracle_timing_value(table1_problem, t, 35.0, 80)
    assert abs(batch.responses.mean() - target) < 3 * se


def test_stack_refuses_incomplete_coverage(table1_problem, rng):
    stack = ClassifierStack(25)
    stack.set_rule(3, NEVER_STOP)
    with pytest.raises(ValueError):
        forward_stop(table1_problem, stack, 0, np.array([40.0]), rng)


def test_stack_rejects_rules_outside_range():
    stack = ClassifierStack(10)
    with pytest.raises(ValueError):
        stack.set_rule(10, NEVER_STOP)
    with pytest.raises(ValueError):
        stack.set_rule(0, NEVER_STOP)


def test_exact_zero_timing_value_continues():
    rule = ConstantRule(0.0)
    stack = ClassifierStack(3)
    stack.set_rule(1, rule)
    stack.set_rule(2, rule)
    assert not stack.stop_mask(1, np.array([[40.0]]))[0]
    assert stack.stop_mask(3, np.array([[40.0]]))[0]
