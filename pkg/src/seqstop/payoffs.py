"""Reward functions for the benchmark Bermudan contracts.

Discounting is folded into the reward: ``h_t(x) = exp(-r t dt) g(x)`` with
``t`` the step index and ``dt`` the physical step size, so the stopping
engine never handles interest rates.  All rewards are puts and hence
nonnegative.
"""

from dataclasses import dataclass

import numpy as np

KINDS = ("put-1d", "basket-put", "geometric-put", "sv-put")


@dataclass
class PayoffSpec:
    """Contract description: payoff kind, strike, discount rate, step size."""

    kind: str
    strike: float
    rate: float
    step_years: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.strike <= 0:
            raise ValueError("strike must be positive")
        if self.step_years <= 0:
            raise ValueError("step_years must be positive")


def payoff(spec, t, x):
    """Discounted reward of stopping at step ``t`` in state ``x``.

    ``x`` is a state ``(d,)`` or a batch ``(n, d)``.  Basket puts pay on the
    arithmetic mean of the coordinates, geometric puts on their product,
    and the stochastic volatility put on the price coordinate alone.
    """
    pts = np.asarray(x, float)
    squeeze = pts.ndim == 1
    pts = np.atleast_2d(pts)
    d = pts.shape[1]
    if spec.kind == "put-1d":
        if d != 1:
            raise ValueError("put-1d requires one-dimensional states")
        level = pts[:, 0]
    elif spec.kind == "basket-put":
        level = pts.mean(axis=1)
    elif spec.kind == "geometric-put":
        level = pts.prod(axis=1)
    else:  # sv-put: state is (price, log-volatility)
        if d != 2:
            raise ValueError("sv-put requires (price, log-volatility) states")
        level = pts[:, 0]
    disc = np.exp(-spec.rate * t * spec.step_years)
    out = disc * np.maximum(spec.strike - level, 0.0)
    return float(out[0]) if squeeze else out
