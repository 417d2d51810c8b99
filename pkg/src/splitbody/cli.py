"""Command-line interface.

Subcommands:
  run      step a scenario and write trajectory/metrics CSVs
  bench    AT/AA for one or more iteration budgets
  sweep    scaling sweep over problem sizes with a linear fit
  compare  AT/AA table across all three solvers

``--scenario`` takes a JSON file path or one of the built-in names
(stir216, stir27, cable640, cable160, lattice, drop, stack2).

Exit codes: 0 success, 2 scenario/usage error, 3 solver abort.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from .bench import run_scaling_sweep, run_simulation, write_bench_csv, write_scaling_csv
from .scenarios import BUILTIN_SCENARIOS, SOLVER_CHOICES, SchemaError, Scenario, load_scenario
from .solver import SolverAbort

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_SOLVER = 3


def _load_scenario_arg(arg: str) -> Scenario:
    if arg in BUILTIN_SCENARIOS and not os.path.exists(arg):
        return BUILTIN_SCENARIOS[arg]()
    return load_scenario(arg)


def _add_common(sub: argparse.ArgumentParser, single_iters: bool = True) -> None:
    sub.add_argument("--scenario", required=True, help="scenario JSON file or built-in name")
    sub.add_argument("--solver", choices=list(SOLVER_CHOICES), default=None)
    if single_iters:
        sub.add_argument("--iters", type=int, default=None, help="solver iteration budget")
    sub.add_argument("--steps", type=int, default=None)
    sub.add_argument("--dt", type=float, default=None)
    sub.add_argument("--threads", type=int, default=None)
    sub.add_argument("--tol", type=float, default=None, help="residual threshold theta_th")
    sub.add_argument("--warm-start", action="store_true", default=None, dest="warm_start")
    sub.add_argument("--strict-contact", action="store_true", default=None, dest="strict_contact")
    sub.add_argument("--out-prefix", default=None, dest="out_prefix")
    sub.add_argument("--seed", type=int, default=None)


def _overrides(args, **extra) -> dict:
    out = {
        "steps": args.steps,
        "dt": args.dt,
        "threads": args.threads,
        "tol": args.tol,
        "warm_start": args.warm_start,
        "strict_contact": args.strict_contact,
        "seed": args.seed,
    }
    out.update(extra)
    return out


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_run(args) -> int:
    scenario = _load_scenario_arg(args.scenario)
    prefix = args.out_prefix if args.out_prefix is not None else scenario.name
    record, _ = run_simulation(
        scenario,
        solver=args.solver,
        out_prefix=prefix,
        iters=args.iters,
        **_overrides(args),
    )
    aa = f"{record.aa:.3f}" if record.aa is not None else "n/a"
    print(
        f"{record.scenario}: solver={record.solver} steps={record.steps} "
        f"iters={record.iters} AT={record.at_ms:.3f} ms AA={aa}"
    )
    print(f"wrote {prefix}_trajectory.csv and {prefix}_metrics.csv")
    return EXIT_OK


def cmd_bench(args) -> int:
    scenario = _load_scenario_arg(args.scenario)
    budgets = args.iters if args.iters else [scenario.solver["iters"]]
    solvers = [args.solver] if args.solver else list(SOLVER_CHOICES)
    records = []
    for iters in budgets:
        for solver in solvers:
            record, _ = run_simulation(scenario, solver=solver, iters=iters, **_overrides(args))
            records.append(record)
    print(f"{'scenario':<16}{'solver':<10}{'iters':>6}{'AT_ms':>12}{'AA':>8}")
    for r in records:
        aa = f"{r.aa:.3f}" if r.aa is not None else "n/a"
        print(f"{r.scenario:<16}{r.solver:<10}{r.iters:>6}{r.at_ms:>12.3f}{aa:>8}")
    if args.out_prefix:
        path = f"{args.out_prefix}_bench.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_bench_csv(records, fh)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _load_scenario_arg(args.scenario)
    iters = args.iters if args.iters is not None else scenario.solver["iters"]
    steps = args.steps if args.steps is not None else 40
    result = run_scaling_sweep(scenario, args.sizes, iters=iters, steps=steps)
    print(f"{'size':>8}{'n_sub':>8}{'n_intra':>10}{'n_coup':>10}{'x':>10}{'AT_ms':>12}")
    for r in result.rows:
        print(f"{r.size:>8}{r.n_subsystems:>8}{r.n_intra:>10.1f}{r.n_coupling:>10.1f}{r.x:>10.1f}{r.at_ms:>12.3f}")
    print(f"fit: AT_ms = {result.slope:.6f} * x + {result.intercept:.3f}, R^2 = {result.r2:.5f}")
    if args.out_prefix:
        path = f"{args.out_prefix}_scaling.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_scaling_csv(result, fh)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = _load_scenario_arg(args.scenario)
    records = []
    for solver in SOLVER_CHOICES:
        record, _ = run_simulation(scenario, solver=solver, iters=args.iters, **_overrides(args))
        records.append(record)
    print(f"{'solver':<10}{'AT_ms':>12}{'AA':>8}")
    for r in records:
        aa = f"{r.aa:.3f}" if r.aa is not None else "n/a"
        print(f"{r.solver:<10}{r.at_ms:>12.3f}{aa:>8}")
    if args.out_prefix:
        path = f"{args.out_prefix}_compare.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_bench_csv(records, fh)
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitbody", description="Subsystem-splitting multibody solver")
    subs = parser.add_subparsers(dest="command", required=True)

    run_p = subs.add_parser("run", help="step a scenario, write trajectory and metrics CSVs")
    _add_common(run_p)
    run_p.set_defaults(func=cmd_run)

    bench_p = subs.add_parser("bench", help="AT/AA over one or more iteration budgets")
    _add_common(bench_p, single_iters=False)
    bench_p.add_argument("--iters", type=_int_list, default=None, help="comma-separated budgets, e.g. 30,60,90")
    bench_p.set_defaults(func=cmd_bench)

    sweep_p = subs.add_parser("sweep", help="scaling sweep with linear fit")
    _add_common(sweep_p)
    sweep_p.add_argument("--sizes", type=_int_list, required=True, help="comma-separated sizes, e.g. 27,64,125,216")
    sweep_p.set_defaults(func=cmd_sweep)

    cmp_p = subs.add_parser("compare", help="side-by-side AT/AA for all solvers")
    _add_common(cmp_p)
    cmp_p.set_defaults(func=cmd_compare)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SolverAbort as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (SchemaError, ValueError, OSError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
