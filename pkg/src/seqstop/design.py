"""Acquisition scores and candidate selection for sequential design.

Candidate sites are ranked by the product score
``EI(x) = L(x) * ALC(x) * p(x)``: a posterior contour loss (how much sign
uncertainty the fit still carries at ``x``), the expected variance
reduction of one more sample, and the state density that says whether the
process ever visits ``x``.  Batches are drawn probabilistically from a
bounded exponential potential of the normalized scores, which concentrates
sampling near the estimated stopping boundary while keeping the design
dense everywhere in the limit.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


@dataclass
class EiConfig:
    """Acquisition settings for one sequential-design run.

    ``loss`` picks the contour criterion (``zc`` weights misclassified sign
    by posterior magnitude, ``sgn`` is the plain sign-error probability).
    ``beta`` is the annealing exponent of the selection potential and
    ``cap`` bounds the normalized score inside the exponential.  ``batch``
    sites are drawn per refit round from ``candidates`` LHS proposals.
    ``rule="greedy"`` switches to epsilon-greedy selection.  Termination is
    by exhausting the per-step budget unless ``termination="tolerance"``,
    which stops once the empirical loss falls below
    ``tol_base * 3**(-clock)`` with the clock counting steps forward
    (``tol_clock="step"``) or backward from the horizon (``"remaining"``).
    """

    loss: str = "zc"
    beta: float = 0.5
    epsilon: float = 0.0
    batch: int = 100
    candidates: int = 500
    cap: float = 20.0
    rule: str = "potential"
    termination: str = "budget"
    tol_base: float = 0.0
    tol_clock: str = "step"

    def __post_init__(self):
        if self.loss not in ("zc", "sgn"):
            raise ValueError("loss must be 'zc' or 'sgn'")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.batch < 1 or self.candidates < 1:
            raise ValueError("batch and candidates must be >= 1")
        if self.rule not in ("potential", "greedy"):
            raise ValueError("rule must be 'potential' or 'greedy'")
        if self.termination not in ("budget", "tolerance"):
            raise ValueError("termination must be 'budget' or 'tolerance'")
        if self.tol_clock not in ("step", "remaining"):
            raise ValueError("tol_clock must be 'step' or 'remaining'")


@dataclass
class CandidateSet:
    """Scored candidate sites from one acquisition round."""

    points: np.ndarray
    loss: np.ndarray
    alc: np.ndarray
    density: np.ndarray
    score: np.ndarray

    def __len__(self):
        return self.points.shape[0]


def _ratio(mean, variance):
    m = np.abs(np.asarray(mean, float))
    v = np.asarray(variance, float)
    if np.any(v < 0):
        raise ValueError("variance must be nonnegative")
    sd = np.sqrt(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(sd > 0, m / np.where(sd > 0, sd, 1.0), np.inf)
    return m, sd, r


def loss_zc(mean, variance):
    """Expected zero-contour loss ``E[|Y| 1{sign Y != sign m}]``.

    Under the Gaussian posterior this is
    ``sd * pdf(-|m|/sd) - |m| * cdf(-|m|/sd)``; it vanishes with the
    posterior variance.
    """
    m, sd, r = _ratio(mean, variance)
    out = np.where(sd > 0, sd * norm.pdf(-r) - m * norm.cdf(-r), 0.0)
    out = np.maximum(out, 0.0)
    return float(out) if np.isscalar(mean) else out


def loss_sign(mean, variance):
    """Posterior probability of misclassifying the sign of the response."""
    m, sd, r = _ratio(mean, variance)
    out = np.where(sd > 0, norm.cdf(-r), np.where(m == 0, 0.5, 0.0))
    return float(out) if np.isscalar(mean) else out


def ei_score(loss, alc, density):
    """Combined acquisition score: the product of the three components."""
    L = np.asarray(loss, float)
    A = np.asarray(alc, float)
    p = np.asarray(density, float)
    if np.any(L < 0) or np.any(A < 0) or np.any(p < 0):
        raise ValueError("score components must be nonnegative")
    out = L * A * p
    return float(out) if np.isscalar(loss) else out


def lhs_candidates(box, count, rng):
    """Latin hypercube sample of ``count`` points in a per-dimension box.

    One point falls in each of ``count`` equal strata along every axis,
    uniformly jittered within its stratum.
    """
    box = np.atleast_2d(np.asarray(box, float))
    if np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must have positive extent in every dimension")
    d = box.shape[0]
    u = np.empty((count, d))
    for j in range(d):
        u[:, j] = (rng.permutation(count) + rng.random(count)) / count
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def score_candidates(model, density_values, points, config):
    """Score LHS proposals against the current rough fit."""
    batch = model.predict_batch(points)
    loss_fn = loss_zc if config.loss == "zc" else loss_sign
    loss = loss_fn(batch.mean, batch.variance)
    dens = np.asarray(density_values, float)
    return CandidateSet(
        points=np.atleast_2d(points),
        loss=loss,
        alc=batch.alc,
        density=dens,
        score=ei_score(loss, batch.alc, dens),
    )


def normalized_scores(score):
    """Shift to minimum 0 and scale to mean 1; None when scores are flat."""
    s = np.asarray(score, float) - np.min(score)
    mu = s.mean()
    if not np.isfinite(mu) or mu <= 0:
        return None
    return s / mu


def selection_weights(score, config):
    """Bounded exponential potential of the normalized scores."""
    s = normalized_scores(score)
    n = len(score)
    if s is None:
        return np.full(n, 1.0 / n)
    logw = config.beta * np.minimum(s, config.cap)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def select_batch(candidates, config, rng, size=None):
    """Draw a batch of design sites from the scored candidates.

    The default rule samples ``size`` sites (with replacement, duplicates
    allowed) from the exponential potential; the greedy rule takes the
    best-scored candidate with probability ``1 - epsilon`` and a uniform
    one otherwise, independently per draw.
    """
    size = config.batch if size is None else int(size)
    n = len(candidates)
    if config.rule == "greedy":
        explore = rng.random(size) < config.epsilon
        best = int(np.argmax(candidates.score))
        idx = np.where(explore, rng.integers(0, n, size=size), best)
    else:
        w = selection_weights(candidates.score, config)
        idx = rng.choice(n, size=size, replace=True, p=w)
    return candidates.points[idx]


def empirical_step_error(candidates):
    """Density-weighted average contour loss over the candidate set."""
    return float(np.mean(candidates.loss * candidates.density))


def termination_check(candidates, step, horizon, config):
    """Decide whether the step's design is fine enough to stop refining.

    Budget mode never stops early (the driver's budget is binding).  In
    tolerance mode, stop once the empirical error drops to
    ``tol_base * 3**(-clock)``.
    """
    if config.termination == "budget":
        return False
    clock = step if config.tol_clock == "step" else horizon - step
    tol = config.tol_base * math.pow(3.0, -clock)
    return empirical_step_error(candidates) <= tol
