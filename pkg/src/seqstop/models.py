"""Markov state-process simulators and state densities.

Two model families drive the benchmark problems: a multi-asset geometric
Brownian motion with independent and identically distributed coordinates
(exact lognormal transitions, no discretization error) and a one-asset
stochastic volatility model whose log-volatility factor mean-reverts as an
Ornstein-Uhlenbeck process (Euler-discretized).  The module also evaluates
the marginal state density used to weight acquisition scores: analytic
lognormal for the GBM family, Gaussian kernel estimate on a reference
sample otherwise.

States are plain float arrays: a point is shape ``(d,)``, a batch is
``(n, d)``.  GBM coordinates are asset prices, the stochastic volatility
state is the pair ``(price, log_volatility)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm


@dataclass
class SimCounters:
    """Mutable diagnostics shared by a run.

    ``transitions`` counts one-step transition draws (one per path per call,
    regardless of Euler substepping) and is the independent cross-check for
    the simulation budget reported by the drivers.  ``sv_clamps`` counts how
    often the Euler scheme had to clamp a price at the positivity floor.
    """

    transitions: int = 0
    sv_clamps: int = 0


@dataclass
class GbmParams:
    """Multi-asset Black-Scholes model with a common volatility."""

    spot: np.ndarray
    rate: float
    vol: float
    dim: int = 1

    def __post_init__(self):
        self.spot = np.broadcast_to(np.asarray(self.spot, float), (self.dim,)).copy()
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not np.all(self.spot > 0):
            raise ValueError("spot prices must be strictly positive")
        if self.vol < 0:
            raise ValueError("volatility must be nonnegative")

    @property
    def x0(self):
        return self.spot.copy()


@dataclass
class SvParams:
    """Stochastic volatility model: exponential-OU log-volatility factor.

    ``dS = r S dt + exp(Y) S dW1`` and ``dY = meanrev (level - Y) dt
    + volvol dW2`` with ``corr(dW1, dW2) = corr``, simulated by Euler steps
    of size ``euler_step`` (years).  ``multiplicative=False`` switches the
    price diffusion to the additive form ``exp(Y) dW1`` without the price
    factor.  Prices that an Euler step drives below ``price_floor`` are
    clamped there and counted.
    """

    rate: float
    meanrev: float
    level: float
    volvol: float
    corr: float
    euler_step: float
    price_floor: float = 1e-8
    multiplicative: bool = True

    def __post_init__(self):
        if abs(self.corr) > 1:
            raise ValueError("corr must lie in [-1, 1]")
        if self.euler_step <= 0:
            raise ValueError("euler_step must be positive")
        if self.price_floor <= 0:
            raise ValueError("price_floor must be positive")


def _as_batch(state, dim):
    x = np.asarray(state, float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise ValueError(f"state has dimension {x.shape[1]}, expected {dim}")
    return x, squeeze


def gbm_transition(state, dt, params, rng, counters=None):
    """Sample the exact GBM transition over ``dt`` years.

    Each coordinate is multiplied by
    ``exp((r - vol^2/2) dt + vol sqrt(dt) Z)`` with independent standard
    normal ``Z`` per coordinate, so the step is exact in law.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, squeeze = _as_batch(state, params.dim)
    if not np.all(x > 0):
        raise ValueError("GBM state must be strictly positive")
    drift = (params.rate - 0.5 * params.vol**2) * dt
    shock = params.vol * math.sqrt(dt) * rng.standard_normal(x.shape)
    out = x * np.exp(drift + shock)
    if counters is not None:
        counters.transitions += x.shape[0]
    return out[0] if squeeze else out


def sv_transition(state, dt, params, rng, counters=None):
    """Euler-simulate the stochastic volatility pair over ``dt`` years.

    ``dt`` must be an integer multiple of ``params.euler_step``; the state
    is advanced by that many substeps with correlated normals obtained from
    the Cholesky factor of the 2x2 correlation matrix.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ratio = dt / params.euler_step
    n_sub = int(round(ratio))
    if n_sub < 1 or abs(ratio - n_sub) > 1e-9 * max(1.0, ratio):
        raise ValueError("dt must be an integer multiple of euler_step")
    x, squeeze = _as_batch(state, 2)
    if not np.all(x[:, 0] > 0):
        raise ValueError("price coordinate must be strictly positive")

    s = x[:, 0].copy()
    y = x[:, 1].copy()
    h = params.euler_step
    sqh = math.sqrt(h)
    cross = math.sqrt(max(0.0, 1.0 - params.corr**2))
    clamps = 0
    for _ in range(n_sub):
        z = rng.standard_normal((s.shape[0], 2))
        z1 = z[:, 0]
        z2 = params.corr * z[:, 0] + cross * z[:, 1]
        diffusion = np.exp(y)
        if params.multiplicative:
            diffusion = diffusion * s
        s = s + params.rate * s * h + diffusion * sqh * z1
        low = s < params.price_floor
        if low.any():
            clamps += int(low.sum())
            s[low] = params.price_floor
        y = y + params.meanrev * (params.level - y) * h + params.volvol * sqh * z2
    out = np.column_stack([s, y])
    if counters is not None:
        counters.transitions += x.shape[0]
        counters.sv_clamps += clamps
    return out[0] if squeeze else out


@dataclass
class DensityModel:
    """Marginal state density ``p(t, . | 0, x0)`` used as the EI weight.

    ``kind="analytic-lognormal"`` needs ``params``/``x0`` and evaluates the
    exact product-lognormal GBM marginal.  ``kind="kernel-estimate"``
    carries a reference sample (one backward step's pilot states) and a
    per-dimension Gaussian bandwidth, Silverman's rule by default.
    """

    kind: str
    params: GbmParams | None = None
    x0: np.ndarray | None = None
    samples: np.ndarray | None = None
    bandwidth: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "analytic-lognormal":
            if self.params is None:
                raise ValueError("analytic density requires GBM parameters")
            if self.x0 is None:
                self.x0 = self.params.x0
            self.x0 = np.asarray(self.x0, float)
        elif self.kind == "kernel-estimate":
            if self.samples is None or len(self.samples) == 0:
                raise ValueError("kernel density requires a reference sample")
            self.samples = np.atleast_2d(np.asarray(self.samples, float))
            if self.bandwidth is None:
                self.bandwidth = silverman_bandwidth(self.samples)
            self.bandwidth = np.asarray(self.bandwidth, float)
        else:
            raise ValueError(f"unknown density kind {self.kind!r}")

    @property
    def dim(self):
        if self.kind == "analytic-lognormal":
            return self.params.dim
        return self.samples.shape[1]


def silverman_bandwidth(samples):
    """Per-dimension Silverman bandwidth for a Gaussian product kernel."""
    x = np.atleast_2d(np.asarray(samples, float))
    n, d = x.shape
    sd = x.std(axis=0, ddof=1) if n > 1 else np.ones(d)
    factor = (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))
    return np.maximum(factor * sd, 1e-12)


def state_density(t, x, model, counters=None):
    """Evaluate the state density at time ``t`` (years) and states ``x``.

    The analytic kind is the product of per-asset lognormal densities with
    log-mean ``ln x0 + (r - vol^2/2) t`` and log-sd ``vol sqrt(t)``; the
    kernel kind ignores ``t`` beyond validation since the reference sample
    already fixes the step.  Points off the state space get density zero.
    """
    if t <= 0:
        raise ValueError("density requires t > 0 (the time-0 law is a point mass)")
    pts, squeeze = _as_batch(x, model.dim)
    if model.kind == "analytic-lognormal":
        p = model.params
        mu = np.log(model.x0) + (p.rate - 0.5 * p.vol**2) * t
        sig = max(p.vol * math.sqrt(t), 1e-300)
        out = np.zeros(pts.shape[0])
        ok = np.all(pts > 0, axis=1)
        if ok.any():
            z = (np.log(pts[ok]) - mu) / sig
            log_pdf = -0.5 * z**2 - np.log(pts[ok] * sig * math.sqrt(2 * math.pi))
            out[ok] = np.exp(log_pdf.sum(axis=1))
    else:
        out = _kde_pdf(model, pts)
    return float(out[0]) if squeeze else out


def _kde_pdf(model, pts, chunk=2048):
    ref = model.samples
    h = model.bandwidth
    norm_const = ref.shape[0] * np.prod(h * math.sqrt(2 * math.pi))
    out = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        block = pts[lo : lo + chunk]
        z = (block[:, None, :] - ref[None, :, :]) / h
        out[lo : lo + chunk] = np.exp(-0.5 * (z**2).sum(axis=2)).sum(axis=1)
    return out / norm_const


def density_box(model, t, q_lo=1e-3, q_hi=0.999):
    """Per-dimension quantile box ``[q_lo, q_hi]`` of the state density.

    Analytic kind: exact lognormal quantiles at time ``t``.  Kernel kind:
    quantiles of the per-dimension Gaussian-mixture marginal, found by
    bisection on the mixture cdf.
    """
    if not 0 < q_lo < q_hi < 1:
        raise ValueError("need 0 < q_lo < q_hi < 1")
    if model.kind == "analytic-lognormal":
        if t <= 0:
            raise ValueError("analytic box requires t > 0")
        p = model.params
        mu = np.log(model.x0) + (p.rate - 0.5 * p.vol**2) * t
        sig = p.vol * math.sqrt(t)
        lo = np.exp(mu + norm.ppf(q_lo) * sig)
        hi = np.exp(mu + norm.ppf(q_hi) * sig)
        return np.column_stack([lo, hi])
    box = np.empty((model.dim, 2))
    for j in range(model.dim):
        box[j, 0] = _mixture_quantile(model.samples[:, j], model.bandwidth[j], q_lo)
        box[j, 1] = _mixture_quantile(model.samples[:, j], model.bandwidth[j], q_hi)
    return box


def _mixture_quantile(centers, h, q):
    lo = centers.min() - 8 * h
    hi = centers.max() + 8 * h
    if hi <= lo:
        return float(centers[0])

    def cdf_gap(v):
        return norm.cdf((v - centers) / h).mean() - q

    return float(brentq(cdf_gap, lo, hi, xtol=1e-10 * max(1.0, abs(hi))))
