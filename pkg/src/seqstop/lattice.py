"""Reference prices for one-dimensional put problems.

A Cox-Ross-Rubinstein lattice with exercise restricted to the problem's
step grid provides an independent Bermudan price and per-step exercise
boundary, used to validate the Monte Carlo engine.  The Black-Scholes
formula supplies the European floor.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .policy import ClassifierStack, ThresholdRule


@dataclass
class OracleSpec:
    """Lattice resolution and the self-convergence tolerance."""

    steps_per_interval: int = 80
    tolerance: float = 1e-3


@dataclass
class OracleResult:
    """Bermudan lattice price and critical exercise prices per step."""

    price: float
    boundary: np.ndarray  # index 1..T valid; entry 0 is nan
    steps_per_interval: int

    def stack(self, horizon):
        """Classifier stack that stops at or below the lattice boundary."""
        stack = ClassifierStack(horizon)
        for t in range(1, horizon):
            stack.set_rule(t, ThresholdRule(self.boundary[t]))
        return stack


def black_scholes_put(s0, strike, rate, vol, maturity):
    """European put value in the Black-Scholes model."""
    if maturity <= 0 or vol <= 0:
        return max(strike - s0, 0.0)
    sq = vol * math.sqrt(maturity)
    d1 = (math.log(s0 / strike) + (rate + 0.5 * vol**2) * maturity) / sq
    d2 = d1 - sq
    return strike * math.exp(-rate * maturity) * norm.cdf(-d2) - s0 * norm.cdf(-d1)


def _require_put_1d(problem):
    from .models import GbmParams

    if not isinstance(problem.model, GbmParams) or problem.model.dim != 1:
        raise ValueError("the lattice oracle requires a one-dimensional GBM problem")


def binomial_oracle(problem, steps_per_interval=80, exercise_steps=None):
    """Price a 1-d Bermudan put on a CRR lattice restricted to the step grid.

    Exercise is allowed at the steps in ``exercise_steps`` (default: every
    step ``1..T-1``) and always at the horizon.  Returns the time-0 price
    together with the per-step critical price, taken as the midpoint
    between the highest exercising lattice node and its neighbor above.
    """
    _require_put_1d(problem)
    model = problem.model
    strike = problem.payoff.strike
    t_steps = problem.horizon
    if exercise_steps is None:
        exercise_steps = range(1, t_steps)
    exercisable = set(int(s) for s in exercise_steps)
    if any(s < 1 or s >= t_steps for s in exercisable):
        raise ValueError("exercise steps must lie in 1..T-1")

    n_sub = int(steps_per_interval)
    if n_sub < 1:
        raise ValueError("steps_per_interval must be >= 1")
    h = problem.step_years / n_sub
    u = math.exp(model.vol * math.sqrt(h)) if model.vol > 0 else 1.0 + 1e-12
    d = 1.0 / u
    q = (math.exp(model.rate * h) - d) / (u - d)
    if not 0.0 < q < 1.0:
        raise ValueError("lattice step too coarse for these parameters")
    disc = math.exp(-model.rate * h)
    s0 = float(model.spot[0])

    total = t_steps * n_sub
    # node prices at level i are s0 * u**(2j - i), j = 0..i
    levels = np.arange(total + 1)
    values = np.maximum(strike - s0 * u ** (2.0 * levels - total), 0.0)

    boundary = np.full(t_steps + 1, np.nan)
    boundary[t_steps] = strike
    for i in range(total - 1, -1, -1):
        values = disc * (q * values[1:] + (1.0 - q) * values[: i + 1])
        step, rem = divmod(i, n_sub)
        if rem == 0 and step in exercisable:
            prices = s0 * u ** (2.0 * np.arange(i + 1) - i)
            intrinsic = np.maximum(strike - prices, 0.0)
            exercise = (intrinsic > 0.0) & (intrinsic >= values - 1e-12)
            if exercise.any():
                j_hi = int(np.max(np.nonzero(exercise)[0]))
                upper = prices[j_hi + 1] if j_hi + 1 <= i else prices[j_hi]
                boundary[step] = 0.5 * (prices[j_hi] + upper)
                values = np.maximum(values, intrinsic)
            else:
                boundary[step] = 0.0
    return OracleResult(price=float(values[0]), boundary=boundary, steps_per_interval=n_sub)


def oracle_timing_value(problem, t, x, steps_per_interval=80):
    """Lattice timing value at step ``t`` and price ``x``, discounted to 0.

    Equals ``exp(-r t dt) * (C(t, x) - (K - x)_+)`` where ``C`` is the
    continuation value of the remaining Bermudan in time-``t`` money units.
    This matches the scale of the sampled responses.
    """
    _require_put_1d(problem)
    if not 0 <= t < problem.horizon:
        raise ValueError("step must lie in 0..T-1")
    from .rmc import StoppingProblem

    remaining = StoppingProblem(
        model=type(problem.model)(
            spot=np.array([float(x)]),
            rate=problem.model.rate,
            vol=problem.model.vol,
            dim=1,
        ),
        payoff=problem.payoff,
        horizon=problem.horizon - t,
        step_years=problem.step_years,
    )
    cont = binomial_oracle(remaining, steps_per_interval).price
    intrinsic = max(problem.payoff.strike - float(x), 0.0)
    return math.exp(-problem.model.rate * t * problem.step_years) * (cont - intrinsic)
