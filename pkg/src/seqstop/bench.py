"""Configuration-driven experiment harness.

Experiments are described by flat INI files with ``[model]``, ``[payoff]``,
``[design]`` and ``[run]`` sections, one experiment per file; the table
instances from the benchmark study ship as committed config files.  A bench
run executes one driver per replication with seeds derived from the master
seed, writes one CSV row per replication plus a summary row, and can dump
deterministic fit grids for plotting.
"""

import concurrent.futures
import configparser
import csv
import io
import os
from dataclasses import dataclass, fields

import numpy as np

from ._streams import replication_seed
from .design import EiConfig
from .lattice import OracleSpec, binomial_oracle
from .models import GbmParams, SvParams
from .payoffs import PayoffSpec
from .regression import PartitionSpec, TreeSpec
from .rmc import StoppingProblem, run_lsmc, run_sequential

METHODS = ("dt", "bw", "lsmc")

CSV_HEADER = ("method", "n_t", "seed", "value", "se", "totsim", "wall_ms")


@dataclass
class RunConfig:
    """One experiment: problem, method, design budget, replication plan."""

    # [model]
    model_kind: str = "gbm"
    dim: int = 1
    spot: tuple = (40.0,)
    rate: float = 0.06
    vol: float = 0.2
    steps: int = 25
    step_years: float = 0.04
    meanrev: float = 0.0
    level: float = 0.0
    volvol: float = 0.0
    corr: float = 0.0
    euler_substeps: int = 10
    logvol: float = 0.0
    # [payoff]
    payoff_kind: str = "put-1d"
    strike: float = 40.0
    # [design]
    n0: int = 1000
    n_step: int = 5000
    batch: int = 100
    candidates: int = 500
    beta: float = 0.5
    epsilon: float = 0.0
    cap: float = 8.0
    loss: str = "zc"
    rule: str = "potential"
    m_rough: int = 4
    m_final: int = 10
    leaf_rough: str = "constant"
    leaf_final: str = "constant"
    min_leaf_rough: int = 20
    min_leaf_final: int = 0
    cells_per_dim: int = 8
    rejuvenate: int = 500
    termination: str = "budget"
    tol_base: float = 0.0
    tol_clock: str = "step"
    # [run]
    method: str = "dt"
    n_out: int = 50_000
    seed: int = 2024
    replications: int = 10
    out: str = "results"
    oracle_steps: int = 80
    oracle_tol: float = 1e-3

    _SECTIONS = {
        "model": ("model_kind", "dim", "spot", "rate", "vol", "steps", "step_years",
                  "meanrev", "level", "volvol", "corr", "euler_substeps", "logvol"),
        "payoff": ("payoff_kind", "strike"),
        "design": ("n0", "n_step", "batch", "candidates", "beta", "epsilon", "cap",
                   "loss", "rule", "m_rough", "m_final", "leaf_rough", "leaf_final",
                   "min_leaf_rough", "min_leaf_final", "cells_per_dim", "rejuvenate",
                   "termination", "tol_base", "tol_clock"),
        "run": ("method", "n_out", "seed", "replications", "out",
                "oracle_steps", "oracle_tol"),
    }

    # -- parsing and serialization ------------------------------------------

    @classmethod
    def parse(cls, text):
        parser = configparser.ConfigParser()
        parser.read_string(text)
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for section, keys in cls._SECTIONS.items():
            if not parser.has_section(section):
                continue
            for key in parser.options(section):
                if key not in keys:
                    raise ValueError(f"unknown key [{section}] {key}")
                raw = parser.get(section, key)
                kwargs[key] = _coerce(raw, types[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.parse(fh.read())

    def serialize(self):
        parser = configparser.ConfigParser()
        for section, keys in self._SECTIONS.items():
            parser.add_section(section)
            for key in keys:
                value = getattr(self, key)
                if isinstance(value, tuple):
                    rendered = ", ".join(repr(v) for v in value)
                else:
                    rendered = repr(value) if isinstance(value, float) else str(value)
                parser.set(section, key, rendered)
        out = io.StringIO()
        parser.write(out)
        return out.getvalue()

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.serialize())

    # -- validation and assembly --------------------------------------------

    def validate(self):
        """Check every referenced field before any simulation starts."""
        if self.model_kind not in ("gbm", "sv"):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.n_out < 2:
            raise ValueError("n_out must be >= 2")
        self.problem()  # exercises model/payoff/horizon invariants
        self.ei_config()
        self.tree_specs()
        PartitionSpec(self.cells_per_dim)
        return self

    def problem(self):
        if self.model_kind == "gbm":
            model = GbmParams(spot=self.spot, rate=self.rate, vol=self.vol, dim=self.dim)
            x0 = None
        else:
            if self.dim != 2:
                raise ValueError("the stochastic volatility model has dim 2 (price, log-vol)")
            model = SvParams(
                rate=self.rate,
                meanrev=self.meanrev,
                level=self.level,
                volvol=self.volvol,
                corr=self.corr,
                euler_step=self.step_years / self.euler_substeps,
                price_floor=1e-8 * self.spot[0],
            )
            x0 = np.array([self.spot[0], self.logvol])
        payoff = PayoffSpec(kind=self.payoff_kind, strike=self.strike,
                            rate=self.rate, step_years=self.step_years)
        return StoppingProblem(model=model, payoff=payoff, horizon=self.steps,
                               step_years=self.step_years, x0=x0)

    def ei_config(self):
        return EiConfig(
            loss=self.loss,
            beta=self.beta,
            epsilon=self.epsilon,
            batch=self.batch,
            candidates=self.candidates,
            cap=self.cap,
            rule=self.rule,
            termination=self.termination,
            tol_base=self.tol_base,
            tol_clock=self.tol_clock,
        )

    def tree_specs(self):
        rough = TreeSpec(
            particles=self.m_rough,
            leaf=self.leaf_rough,
            min_leaf=self.min_leaf_rough or None,
            rejuvenate_every=self.rejuvenate,
        )
        final = TreeSpec(
            particles=self.m_final,
            leaf=self.leaf_final,
            min_leaf=self.min_leaf_final or None,
            rejuvenate_every=self.rejuvenate,
        )
        return rough, final


def _coerce(raw, typ):
    raw = raw.strip()
    name = typ if isinstance(typ, str) else typ.__name__
    if name == "int":
        return int(raw)
    if name == "float":
        return float(raw)
    if name == "tuple":
        return tuple(float(tok) for tok in raw.replace(",", " ").split())
    return raw


def run_replication(config, k, method=None, keep_designs=False):
    """Execute replication ``k`` with its derived seed; returns a RunReport."""
    method = method or config.method
    problem = config.problem()
    seed = replication_seed(config.seed, k)
    rough, final = config.tree_specs()
    if method == "dt":
        _, report = run_sequential(
            problem, rough, final, config.ei_config(),
            config.n0, config.n_step, seed, config.n_out, keep_designs,
        )
    elif method == "bw":
        _, report = run_lsmc(
            problem, PartitionSpec(config.cells_per_dim),
            config.n_step, seed, config.n_out, keep_designs,
        )
    else:  # lsmc: the classical driver with the tree regression
        _, report = run_lsmc(
            problem, final, config.n_step, seed, config.n_out, keep_designs,
        )
    report.method = method
    return report


def run_experiment(config, method=None, jobs=1):
    """Run all replications; returns (rows, summary, failures).

    ``rows`` holds one CSV-ready dict per successful replication; failures
    are recorded as ``(replication, message)`` and the summary (mean value,
    standard error of the mean across replications, mean totsim) is taken
    over the successes.
    """
    config.validate()
    method = method or config.method
    reports = {}
    failures = []
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {
                pool.submit(run_replication, config, k, method): k
                for k in range(config.replications)
            }
            for fut in concurrent.futures.as_completed(futs):
                k = futs[fut]
                try:
                    reports[k] = fut.result()
                except Exception as exc:
                    failures.append((k, str(exc)))
    else:
        for k in range(config.replications):
            try:
                reports[k] = run_replication(config, k, method)
            except Exception as exc:
                failures.append((k, str(exc)))

    rows = [reports[k].row() for k in sorted(reports)]
    summary = None
    if rows:
        values = np.array([r["value"] for r in rows])
        se = values.std(ddof=1) / np.sqrt(len(values)) if len(values) > 1 else 0.0
        summary = {
            "method": method,
            "n_t": config.n_step,
            "seed": "summary",
            "value": float(values.mean()),
            "se": float(se),
            "totsim": float(np.mean([r["totsim"] for r in rows])),
            "wall_ms": float(np.mean([r["wall_ms"] for r in rows])),
        }
    return rows, summary, failures


def write_rows(path, rows, summary=None):
    """Write replication rows (and the summary row) as a CSV file."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        if summary is not None:
            writer.writerow(summary)
    return path


def oracle_reference(config):
    """Lattice reference price and boundary with a doubling convergence check."""
    problem = config.problem()
    spec = OracleSpec(steps_per_interval=config.oracle_steps, tolerance=config.oracle_tol)
    coarse = binomial_oracle(problem, spec.steps_per_interval)
    fine = binomial_oracle(problem, 2 * spec.steps_per_interval)
    return {
        "price": fine.price,
        "price_coarse": coarse.price,
        "converged": abs(fine.price - coarse.price) < spec.tolerance,
        "boundary": fine.boundary,
        "result": fine,
    }


def dump_fit_grid(stack, problem, step, grid_spec, path):
    """Write the classifier surface at one step as a tab-separated grid.

    ``grid_spec`` lists ``(lo, hi, count)`` per state dimension; the file
    has a one-line schema header and rows ``x1..xd, mean, variance, stop``.
    Two invocations on the same stack produce identical bytes.
    """
    if not 1 <= step <= problem.horizon - 1:
        raise ValueError("fit grids exist for steps 1..T-1 only")
    axes = [np.linspace(lo, hi, int(count)) for lo, hi, count in grid_spec]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    rule = stack.rule(step)
    mean, variance = rule.posterior(pts)
    stop = (mean < 0.0).astype(int)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        cols = [f"x{j + 1}" for j in range(pts.shape[1])] + ["mean", "variance", "stop"]
        fh.write("\t".join(cols) + "\n")
        for row, mn, vr, st in zip(pts, mean, variance, stop):
            coords = "\t".join(f"{c:.10g}" for c in row)
            fh.write(f"{coords}\t{mn:.10g}\t{vr:.10g}\t{st}\n")
    return path
