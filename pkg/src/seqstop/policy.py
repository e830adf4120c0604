"""Stopping rules and forward Monte Carlo of the stopping time.

A classifier is any frozen fit exposing ``timing_mean(states)``: the rule
stops wherever the predicted timing value is strictly negative.  An exact
zero continues: with localized fits a zero mean almost always marks a
region whose sampled continuation payoffs were all worthless, where the
true timing value of a put is still positive, so treating the tie as
"stop" silently forfeits continuation value.  A :class:`ClassifierStack`
holds one classifier per step; the horizon step always stops.  The forward
simulator walks a batch of paths until each enters a stopping set,
producing the pathwise timing-value samples that the backward induction
regresses.
"""

from dataclasses import dataclass

import numpy as np

from .payoffs import payoff


class ConstantRule:
    """Classifier with a constant timing value (always/never stop)."""

    def __init__(self, value):
        self.value = float(value)

    def timing_mean(self, states):
        return np.full(np.atleast_2d(states).shape[0], self.value)

    def posterior(self, states):
        m = self.timing_mean(states)
        return m, np.zeros_like(m)


class ThresholdRule:
    """Stop iff one coordinate is at or below a boundary level.

    The exposed timing value is ``x[coord] - boundary``, which has the
    correct sign for put-style exercise regions.
    """

    def __init__(self, boundary, coord=0):
        self.boundary = float(boundary)
        self.coord = int(coord)

    def timing_mean(self, states):
        return np.atleast_2d(states)[:, self.coord] - self.boundary

    def posterior(self, states):
        m = self.timing_mean(states)
        return m, np.zeros_like(m)


ALWAYS_STOP = ConstantRule(-1.0)
NEVER_STOP = ConstantRule(1.0)


class ClassifierStack:
    """Per-step stopping rules for steps ``1..T``; step ``T`` always stops."""

    def __init__(self, horizon):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = int(horizon)
        self._rules = {}

    def set_rule(self, step, classifier):
        if not 1 <= step < self.horizon:
            raise ValueError("classifiers are set for steps 1..T-1 only")
        self._rules[int(step)] = classifier

    def rule(self, step):
        if step == self.horizon:
            return ALWAYS_STOP
        return self._rules[step]

    def covers(self, first_step):
        """True if every step in ``first_step..T`` has a rule."""
        return all(s in self._rules for s in range(first_step, self.horizon))

    def stop_mask(self, step, states):
        if step == self.horizon:
            return np.ones(np.atleast_2d(states).shape[0], dtype=bool)
        return self._rules[step].timing_mean(states) < 0.0


@dataclass
class TimingSamples:
    """Batch of pathwise timing-value samples collected at one step.

    ``responses[i] = h_tau(x_tau) - h_t(sites[i])`` along a fresh forward
    path from ``sites[i]``; ``steps_used = tau - t`` counts the transition
    draws the path consumed.
    """

    step: int
    sites: np.ndarray
    responses: np.ndarray
    taus: np.ndarray
    steps_used: np.ndarray

    def __len__(self):
        return self.sites.shape[0]


def _walk(problem, stack, t, states, rng, counters=None):
    """Run Algorithm-2 forward paths from ``states`` at step ``t``.

    Returns ``(pay, tau, steps)`` where ``pay`` is the discounted reward
    collected at the stopping step, ``tau >= t + 1`` the realized stopping
    step, and ``steps = tau - t`` the number of transition draws.
    """
    horizon = problem.horizon
    if not stack.covers(t + 1):
        raise ValueError(f"classifier stack does not cover steps {t + 1}..{horizon - 1}")
    cur = np.atleast_2d(np.asarray(states, float)).copy()
    n = cur.shape[0]
    pay = np.empty(n)
    tau = np.empty(n, dtype=np.int64)
    alive = np.arange(n)
    for s in range(t + 1, horizon + 1):
        cur = problem.transition(cur, rng, counters)
        stop = stack.stop_mask(s, cur)
        if stop.any():
            hit = alive[stop]
            pay[hit] = payoff(problem.payoff, s, cur[stop])
            tau[hit] = s
            keep = ~stop
            alive = alive[keep]
            cur = cur[keep]
            if alive.size == 0:
                break
    steps = tau - t
    return pay, tau, steps


def forward_stop(problem, stack, t, x, rng, counters=None):
    """Stop a single forward path started from step ``t`` at state ``x``.

    Returns ``(reward, tau, steps_used)``.  The walk never consults rules
    at steps ``<= t`` and falls back to stopping at the horizon.
    """
    pay, tau, steps = _walk(problem, stack, t, np.asarray(x, float)[None, :], rng, counters)
    return float(pay[0]), int(tau[0]), int(steps[0])


def sample_timing_batch(problem, stack, t, sites, rng, counters=None):
    """Sample one timing-value response per site with fresh forward paths.

    Paths are regenerated out-of-sample for every call (no reuse across
    steps), which keeps the responses conditionally unbiased at the cost of
    extra simulation accounted in ``steps_used``.
    """
    pts = np.atleast_2d(np.asarray(sites, float))
    if pts.shape[0] == 0:
        raise ValueError("sites must be non-empty")
    pay, tau, steps = _walk(problem, stack, t, pts, rng, counters)
    responses = pay - payoff(problem.payoff, t, pts)
    return TimingSamples(step=t, sites=pts, responses=responses, taus=tau, steps_used=steps)
