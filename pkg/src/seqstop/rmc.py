"""Backward-induction drivers for optimal stopping.

``run_lsmc`` is the classical scheme: one design per step drawn from the
pilot law of the state process, one regression per step.  ``run_sequential``
replaces the fixed design with an acquisition loop that grows each step's
design toward the stopping boundary before a final, finer refit freezes the
step's classifier.  Both report the out-of-sample value, the simulation
budget actually consumed, and enough diagnostics to reproduce the paper
trail of a run.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import _streams as streams
from .design import lhs_candidates, score_candidates, select_batch, termination_check
from .models import (
    DensityModel,
    GbmParams,
    SimCounters,
    SvParams,
    density_box,
    gbm_transition,
    state_density,
    sv_transition,
)
from .policy import ClassifierStack, _walk, sample_timing_batch
from .regression import PartitionSpec, fit


@dataclass
class StoppingProblem:
    """A discrete-time stopping instance: model, reward, clock, start."""

    model: GbmParams | SvParams
    payoff: "PayoffSpec"
    horizon: int
    step_years: float
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1 step")
        if self.step_years <= 0:
            raise ValueError("step_years must be positive")
        if self.x0 is None:
            if isinstance(self.model, SvParams):
                raise ValueError("stochastic volatility problems need an explicit x0")
            self.x0 = self.model.x0
        self.x0 = np.asarray(self.x0, float)
        if self.x0.shape != (self.dim,):
            raise ValueError(f"x0 must have shape ({self.dim},)")

    @property
    def dim(self):
        return self.model.dim if isinstance(self.model, GbmParams) else 2

    def transition(self, states, rng, counters=None):
        if isinstance(self.model, GbmParams):
            return gbm_transition(states, self.step_years, self.model, rng, counters)
        return sv_transition(states, self.step_years, self.model, rng, counters)

    def step_density(self, t, pilot_states=None):
        """Marginal density handle for step ``t`` (GBM analytic, else KDE)."""
        if isinstance(self.model, GbmParams):
            return DensityModel("analytic-lognormal", params=self.model, x0=self.x0)
        if pilot_states is None:
            raise ValueError("the kernel density needs the step's pilot states")
        return DensityModel("kernel-estimate", samples=pilot_states)


@dataclass
class DesignSet:
    """One step's growing design, arrival order preserved."""

    step: int
    sites: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        self.sites = np.atleast_2d(np.asarray(self.sites, float))
        self.responses = np.asarray(self.responses, float)
        if self.sites.shape[0] != self.responses.shape[0]:
            raise ValueError("sites and responses must have equal length")

    @property
    def n(self):
        return self.sites.shape[0]

    def extend(self, sites, responses):
        self.sites = np.vstack([self.sites, np.atleast_2d(sites)])
        self.responses = np.concatenate([self.responses, responses])


@dataclass
class RunReport:
    """Benchmark record of one driver run."""

    method: str
    value: float
    std_error: float
    totsim: int
    design_sizes: dict
    wall_ms: float
    seed: int
    n_budget: int
    pilot_sims: int = 0
    valuation_sims: int = 0
    response_transitions: int = 0
    sv_clamps: int = 0
    designs: dict = field(default_factory=dict)
    design_split: dict = field(default_factory=dict)

    def row(self):
        return {
            "method": self.method,
            "n_t": self.n_budget,
            "seed": self.seed,
            "value": self.value,
            "se": self.std_error,
            "totsim": self.totsim,
            "wall_ms": round(self.wall_ms, 3),
        }


def simulate_pilot(problem, count, rng, counters=None):
    """Simulate ``count`` trajectories of the chain from the initial state.

    Returns an array ``(count, T + 1, d)``; row ``t`` holds the step-``t``
    states and seeds that step's initial design, kernel density, and
    candidate box.
    """
    paths = np.empty((count, problem.horizon + 1, problem.dim))
    paths[:, 0] = problem.x0
    cur = np.broadcast_to(problem.x0, (count, problem.dim)).copy()
    for t in range(1, problem.horizon + 1):
        cur = problem.transition(cur, rng, counters)
        paths[:, t] = cur
    return paths


def value_estimate(stack, problem, n_out, rng, counters=None):
    """Out-of-sample value of a stopping rule from fresh forward paths.

    Every path starts at the initial state and is stopped by the stack from
    step 0 (first exercise opportunity is step 1); returns the mean
    discounted reward and its standard error.
    """
    if not stack.covers(1):
        raise ValueError("classifier stack must cover steps 1..T-1")
    states = np.broadcast_to(problem.x0, (int(n_out), problem.dim)).copy()
    pay, _, _ = _walk(problem, stack, 0, states, rng, counters)
    se = pay.std(ddof=1) / np.sqrt(n_out) if n_out > 1 else 0.0
    return float(pay.mean()), float(se)


def _regression_label(spec):
    if isinstance(spec, PartitionSpec):
        return "bw"
    return "lsmc"


def run_lsmc(problem, regression, n_per_step, seed, n_out=50_000, keep_designs=False):
    """Classical regression Monte Carlo with per-step pilot designs.

    At each backward step the design sites are the pilot states of that
    step, the responses come from fresh out-of-sample forward paths, and a
    single regression freezes the step's classifier.
    """
    start = time.perf_counter()
    counters = SimCounters()
    horizon = problem.horizon
    pilot_rng = streams.substream(seed, streams.PILOT)
    pilots = simulate_pilot(problem, n_per_step, pilot_rng, counters)
    pilot_sims = counters.transitions

    stack = ClassifierStack(horizon)
    totsim = 0
    sizes = {}
    designs = {}
    split = {}
    before = counters.transitions
    for t in range(horizon - 1, 0, -1):
        resp_rng = streams.substream(seed, streams.RESPONSES, t)
        batch = sample_timing_batch(problem, stack, t, pilots[:, t], resp_rng, counters)
        totsim += int(batch.steps_used.sum())
        design = DesignSet(t, batch.sites, batch.responses)
        try:
            model = fit(design, regression, rng=streams.substream(seed, streams.FINAL_FIT, t))
        except Exception as exc:
            raise RuntimeError(f"regression failed at step {t}: {exc}") from exc
        stack.set_rule(t, model.freeze())
        sizes[t] = design.n
        split[t] = design.n
        if keep_designs:
            designs[t] = (design.sites.copy(), design.n)
    response_transitions = counters.transitions - before

    val_rng = streams.substream(seed, streams.VALUATION)
    before = counters.transitions
    value, se = value_estimate(stack, problem, n_out, val_rng, counters)
    report = RunReport(
        method=_regression_label(regression),
        value=value,
        std_error=se,
        totsim=totsim,
        design_sizes=sizes,
        wall_ms=1e3 * (time.perf_counter() - start),
        seed=seed,
        n_budget=n_per_step,
        pilot_sims=pilot_sims,
        valuation_sims=counters.transitions - before,
        response_transitions=response_transitions,
        sv_clamps=counters.sv_clamps,
        designs=designs,
        design_split=split,
    )
    return stack, report


def run_sequential(
    problem,
    rough,
    final,
    ei,
    n_initial,
    n_per_step,
    seed,
    n_out=50_000,
    keep_designs=False,
):
    """Adaptive regression Monte Carlo with acquisition-driven designs.

    Each backward step starts from the pilot design, then alternates LHS
    candidate scoring, potential-weighted batch selection, fresh response
    simulation, and streaming updates of the rough fit until the step
    budget ``n_per_step`` is spent (or the tolerance rule fires).  A final
    fit on the complete design freezes the step's classifier.
    """
    if n_per_step < n_initial:
        raise ValueError("n_per_step must be at least n_initial")
    start = time.perf_counter()
    counters = SimCounters()
    horizon = problem.horizon
    pilot_rng = streams.substream(seed, streams.PILOT)
    pilots = simulate_pilot(problem, n_initial, pilot_rng, counters)
    pilot_sims = counters.transitions

    stack = ClassifierStack(horizon)
    totsim = 0
    sizes = {}
    designs = {}
    split = {}
    before = counters.transitions
    for t in range(horizon - 1, 0, -1):
        resp_rng = streams.substream(seed, streams.RESPONSES, t)
        batch = sample_timing_batch(problem, stack, t, pilots[:, t], resp_rng, counters)
        totsim += int(batch.steps_used.sum())
        design = DesignSet(t, batch.sites, batch.responses)
        try:
            model = fit(design, rough, rng=streams.substream(seed, streams.ROUGH_FIT, t))
        except Exception as exc:
            raise RuntimeError(f"regression failed at step {t}: {exc}") from exc

        if design.n < n_per_step:
            density = problem.step_density(t, pilots[:, t])
            box = density_box(density, t * problem.step_years)
            cand_rng = streams.substream(seed, streams.CANDIDATES, t)
            while design.n < n_per_step:
                pts = lhs_candidates(box, ei.candidates, cand_rng)
                dens = state_density(t * problem.step_years, pts, density)
                cands = score_candidates(model, dens, pts, ei)
                if termination_check(cands, t, horizon, ei):
                    break
                chosen = select_batch(cands, ei, cand_rng, size=min(ei.batch, n_per_step - design.n))
                extra = sample_timing_batch(problem, stack, t, chosen, resp_rng, counters)
                totsim += int(extra.steps_used.sum())
                design.extend(extra.sites, extra.responses)
                model = model.update(extra.sites, extra.responses)

        try:
            model = fit(design, final, rng=streams.substream(seed, streams.FINAL_FIT, t))
        except Exception as exc:
            raise RuntimeError(f"final regression failed at step {t}: {exc}") from exc
        stack.set_rule(t, model.freeze())
        sizes[t] = design.n
        split[t] = n_initial
        if keep_designs:
            designs[t] = (design.sites.copy(), n_initial)
    response_transitions = counters.transitions - before

    val_rng = streams.substream(seed, streams.VALUATION)
    before = counters.transitions
    value, se = value_estimate(stack, problem, n_out, val_rng, counters)
    report = RunReport(
        method="dt",
        value=value,
        std_error=se,
        totsim=totsim,
        design_sizes=sizes,
        wall_ms=1e3 * (time.perf_counter() - start),
        seed=seed,
        n_budget=n_per_step,
        pilot_sims=pilot_sims,
        valuation_sims=counters.transitions - before,
        response_transitions=response_transitions,
        sv_clamps=counters.sv_clamps,
        designs=designs,
        design_split=split,
    )
    return stack, report
