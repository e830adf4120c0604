"""Command-line front end for the experiment harness.

Subcommands: ``price`` (one run), ``bench`` (replicated runs with a summary
row), ``oracle`` (lattice reference for 1-d instances), ``dump`` (fit-grid
export for one backward step).  Exit code 0 means full success.
"""

import argparse
import os
import sys

import numpy as np

from .bench import RunConfig, dump_fit_grid, oracle_reference, run_experiment, run_replication
from .models import density_box


def _load(args):
    config = RunConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "method", None):
        config.method = args.method
    if args.out is not None:
        config.out = args.out
    config.validate()
    return config


def _stem(args):
    return os.path.splitext(os.path.basename(args.config))[0]


def cmd_price(args):
    config = _load(args)
    report = run_replication(config, 0)
    row = report.row()
    print(f"method={row['method']} n_t={row['n_t']} seed={row['seed']}")
    print(f"value={row['value']:.6f} se={row['se']:.6f} totsim={row['totsim']} wall_ms={row['wall_ms']:.0f}")
    return 0


def cmd_bench(args):
    config = _load(args)
    rows, summary, failures = run_experiment(config, jobs=args.jobs)
    from .bench import write_rows

    path = os.path.join(config.out, f"{_stem(args)}.csv")
    write_rows(path, rows, summary)
    for row in rows:
        print(f"seed={row['seed']} value={row['value']:.6f} se={row['se']:.6f} totsim={row['totsim']}")
    if summary:
        print(f"summary: value={summary['value']:.6f} se={summary['se']:.6f} "
              f"totsim={summary['totsim']:.0f} ({len(rows)} runs) -> {path}")
    for k, msg in failures:
        print(f"replication {k} failed: {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_oracle(args):
    config = _load(args)
    ref = oracle_reference(config)
    print(f"lattice price: {ref['price']:.6f} (coarse {ref['price_coarse']:.6f}, "
          f"converged={ref['converged']})")
    boundary = ref["boundary"]
    for t in range(1, config.steps + 1):
        print(f"step {t:3d}: boundary {boundary[t]:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{_stem(args)}_oracle.tsv")
        with open(path, "w") as fh:
            fh.write("step\tboundary\n")
            for t in range(1, config.steps + 1):
                fh.write(f"{t}\t{boundary[t]:.6f}\n")
        print(f"boundary table -> {path}")
    return 0 if ref["converged"] else 1


def cmd_dump(args):
    config = _load(args)
    problem = config.problem()
    if not 1 <= args.step <= config.steps - 1:
        print(f"step must lie in 1..{config.steps - 1}", file=sys.stderr)
        return 2
    report_method = config.method
    from .bench import run_replication as _run

    from ._streams import replication_seed
    from .rmc import run_lsmc, run_sequential
    from .regression import PartitionSpec

    seed = replication_seed(config.seed, 0)
    rough, final = config.tree_specs()
    if report_method == "dt":
        stack, _ = run_sequential(problem, rough, final, config.ei_config(),
                                  config.n0, config.n_step, seed, config.n_out)
    elif report_method == "bw":
        stack, _ = run_lsmc(problem, PartitionSpec(config.cells_per_dim),
                            config.n_step, seed, config.n_out)
    else:
        stack, _ = run_lsmc(problem, final, config.n_step, seed, config.n_out)

    if args.grid:
        grid_spec = []
        for token in args.grid.split(";"):
            lo, hi, count = token.split(",")
            grid_spec.append((float(lo), float(hi), int(count)))
    else:
        density = problem.step_density(args.step, None if config.model_kind == "gbm" else _pilot_states(problem, config, args.step))
        box = density_box(density, args.step * config.step_years)
        per_dim = 201 if problem.dim == 1 else 61
        grid_spec = [(lo, hi, per_dim) for lo, hi in box]
    out_dir = args.out or config.out
    path = os.path.join(out_dir, f"{_stem(args)}_fit_t{args.step}.tsv")
    dump_fit_grid(stack, problem, args.step, grid_spec, path)
    print(f"fit grid -> {path}")
    return 0


def _pilot_states(problem, config, step):
    from ._streams import PILOT, replication_seed, substream

    from .rmc import simulate_pilot

    rng = substream(replication_seed(config.seed, 0), PILOT)
    return simulate_pilot(problem, config.n0, rng)[:, step]


def main(argv=None):
    parser = argparse.ArgumentParser(prog="seqstop",
                                     description="Sequential-design Monte Carlo for optimal stopping")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, method=True):
        p.add_argument("config", help="experiment config file (INI)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output directory override")
        if method:
            p.add_argument("--method", choices=("dt", "bw", "lsmc"), default=None,
                           help="override the solution method")

    p = sub.add_parser("price", help="single run of the configured method")
    common(p)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("bench", help="replicated runs with a summary row")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="concurrent replications")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="binomial lattice reference (1-d GBM)")
    common(p, method=False)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("dump", help="export the fitted classifier on a grid")
    common(p)
    p.add_argument("--step", type=int, required=True, help="backward step to export")
    p.add_argument("--grid", default=None,
                   help="per-dimension grid 'lo,hi,n;lo,hi,n'; default from the state density")
    p.set_defaults(func=cmd_dump)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
