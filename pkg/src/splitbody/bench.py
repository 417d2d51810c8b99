"""Benchmark harness: step loop, accuracy/timing metrics, CSV emission, sweeps.

AT is the mean per-step solver time in milliseconds (assembly, factorization
and iterations; collision detection and CSV IO excluded). AA is the mean over
steps of -log10 of the per-step total constraint error norm, floored at 1e-16,
so AA is finite and never exceeds 16.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.stats

from .baselines import build_delassus, pgs_solve, pj_solve
from .bodies import advance_kinematic, assemble_subsystem_dynamics, integrate_state
from .constraints import constraint_error_report
from .scenarios import Scenario, SimModel, from_dict, materialize, to_dict
from .solver import (
    SolverConfig,
    fold_dynamics,
    merge_folded_impulses,
    solve_step,
    split_foldable,
)

ERROR_FLOOR = 1e-16

TRAJECTORY_COLUMNS = ["step", "body", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"]
METRICS_COLUMNS = [
    "step",
    "solver_ms",
    "iterations",
    "theta_final",
    "err_soft",
    "err_hard_inequality",
    "err_hard_equality",
    "err_contact",
    "err_total",
]


@dataclass
class StepMetrics:
    step: int
    solver_ms: float
    iterations: int
    theta_final: float
    errors: dict
    max_penetration: float
    n_intra: int
    n_coupling: int


@dataclass
class BenchRecord:
    scenario: str
    solver: str
    iters: int
    steps: int
    at_ms: float
    aa: Optional[float]
    r2: Optional[float] = None


def apply_overrides(scenario: Scenario, **overrides) -> Scenario:
    """Rebuild a scenario with CLI-style overrides; None values are ignored."""
    doc = to_dict(scenario)
    sections = {
        "steps": "sim",
        "dt": "sim",
        "seed": "sim",
        "solver": "solver",
        "iters": "solver",
        "tol": "solver",
        "threads": "solver",
        "warm_start": "solver",
        "strict_contact": "solver",
    }
    unknown = set(overrides) - set(sections)
    if unknown:
        raise ValueError(f"unknown override(s): {sorted(unknown)}")
    for key, value in overrides.items():
        if value is not None:
            doc[sections[key]][key] = value
    return from_dict(doc)


def _aa_of(total_error: float) -> float:
    return -math.log10(max(float(total_error), ERROR_FLOOR))


def step_once(model: SimModel, solver: str, config: SolverConfig, warm_cache: Optional[dict]) -> StepMetrics:
    """Advance one time step with the chosen solver."""
    world = model.world
    t_now = world.time
    for kb in world.kinematic_bodies:
        vh = kb.step_velocity(t_now, world.dt)
        kb.lin_vel = vh[:3].copy()
        kb.ang_vel = vh[3:].copy()
    cons = model.step_constraints()
    n_intra, n_coupling = model.constraint_counts(cons)
    if solver == "subadmm":
        v_hats, lambdas, report = solve_step(world, cons, config, warm_cache=warm_cache)
        ms = report.timings["total_ms"]
        iters_used = report.iterations
        theta = report.theta_final
        errors = report.errors
    elif solver in ("pgs", "pj"):
        t0 = time.perf_counter()
        dynamics = [assemble_subsystem_dynamics(s, world) for s in world.subsystems]
        fold_idx: list[int] = []
        act_idx = list(range(len(cons)))
        if config.fold_intra_soft:
            fold_idx, act_idx = split_foldable(cons)
            if fold_idx:
                dynamics = fold_dynamics(dynamics, cons, fold_idx)
        active = [cons[j] for j in act_idx]
        system = build_delassus(dynamics, active, strict_contact=config.strict_contact)
        if solver == "pgs":
            lam_rows = pgs_solve(system, config.max_iters)
        else:
            lam_rows = pj_solve(system, config.max_iters)
        v_hats = system.recover_velocities(lam_rows)
        ms = (time.perf_counter() - t0) * 1e3
        for sub, vh in zip(world.subsystems, v_hats):
            integrate_state(sub, vh, world.dt)
        world.step_index += 1
        lambdas = system.lambdas(lam_rows)
        if fold_idx:
            lambdas = merge_folded_impulses(cons, fold_idx, act_idx, lambdas, v_hats)
        errors = constraint_error_report(cons, v_hats, lambdas)
        iters_used = config.max_iters
        theta = float("nan")
    else:
        raise ValueError(f"unknown solver {solver!r}")
    for kb in world.kinematic_bodies:
        advance_kinematic(kb, t_now, world.dt)
    return StepMetrics(
        step=world.step_index,
        solver_ms=ms,
        iterations=iters_used,
        theta_final=theta,
        errors=errors,
        max_penetration=model.last_max_penetration,
        n_intra=n_intra,
        n_coupling=n_coupling,
    )


def _body_rows(model: SimModel, step: int):
    for sub in model.world.subsystems:
        if sub.block is not None:
            blk = sub.block
            for i in range(blk.count):
                p = blk.positions[i]
                v = blk.velocities[i]
                yield [step, f"p{sub.index}.{i}", p[0], p[1], p[2], 1.0, 0.0, 0.0, 0.0, v[0], v[1], v[2], 0.0, 0.0, 0.0]
        else:
            for body in sub.bodies:
                p, q, v, w = body.position, body.orientation, body.lin_vel, body.ang_vel
                yield [step, body.name, p[0], p[1], p[2], q[0], q[1], q[2], q[3], v[0], v[1], v[2], w[0], w[1], w[2]]
    for body in model.world.kinematic_bodies:
        p, q, v, w = body.position, body.orientation, body.lin_vel, body.ang_vel
        yield [step, body.name, p[0], p[1], p[2], q[0], q[1], q[2], q[3], v[0], v[1], v[2], w[0], w[1], w[2]]


def _fmt(value):
    if isinstance(value, float):
        return repr(value)  # full round-trip precision, deterministic
    return value


class _CsvSink:
    def __init__(self, fh, columns):
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(columns)

    def row(self, values) -> None:
        self.writer.writerow([_fmt(v) for v in values])


def run_simulation(
    scenario: Scenario,
    solver: Optional[str] = None,
    out_prefix: Optional[str] = None,
    trajectory_sink=None,
    metrics_sink=None,
    **overrides,
) -> tuple[BenchRecord, list[StepMetrics]]:
    """Run the scenario to completion; returns the record and per-step metrics.

    ``trajectory_sink``/``metrics_sink`` are writable text files; when
    ``out_prefix`` is given, <prefix>_trajectory.csv and <prefix>_metrics.csv
    are created instead. Overrides (steps=, iters=, seed=, ...) rebuild the
    scenario before materialization.
    """
    sc = apply_overrides(scenario, solver=solver, **overrides)
    solver_name = sc.solver["solver"]
    model = materialize(sc)
    config = SolverConfig(
        max_iters=sc.solver["iters"],
        theta_threshold=sc.solver["tol"],
        warm_start=sc.solver["warm_start"],
        strict_contact=sc.solver["strict_contact"],
        beta_scale=sc.solver["beta_scale"],
        threads=sc.solver["threads"],
    )
    warm_cache: Optional[dict] = {} if config.warm_start else None

    opened = []
    try:
        if out_prefix is not None:
            trajectory_sink = open(f"{out_prefix}_trajectory.csv", "w", encoding="utf-8", newline="")
            metrics_sink = open(f"{out_prefix}_metrics.csv", "w", encoding="utf-8", newline="")
            opened = [trajectory_sink, metrics_sink]
        traj = _CsvSink(trajectory_sink, TRAJECTORY_COLUMNS) if trajectory_sink is not None else None
        mets = _CsvSink(metrics_sink, METRICS_COLUMNS) if metrics_sink is not None else None

        metrics: list[StepMetrics] = []
        for _ in range(sc.sim["steps"]):
            met = step_once(model, solver_name, config, warm_cache)
            metrics.append(met)
            if mets is not None:
                e = met.errors
                mets.row(
                    [
                        met.step,
                        met.solver_ms,
                        met.iterations,
                        met.theta_final,
                        e["soft"],
                        e["hard_inequality"],
                        e["hard_equality"],
                        e["contact"],
                        e["total"],
                    ]
                )
            if traj is not None:
                for row in _body_rows(model, met.step):
                    traj.row(row)
    finally:
        for fh in opened:
            fh.close()

    if metrics:
        at_ms = float(np.mean([m.solver_ms for m in metrics]))
        aa = float(np.mean([_aa_of(m.errors["total"]) for m in metrics]))
    else:
        at_ms, aa = 0.0, None
    record = BenchRecord(
        scenario=sc.name,
        solver=solver_name,
        iters=sc.solver["iters"],
        steps=len(metrics),
        at_ms=at_ms,
        aa=aa,
    )
    return record, metrics


# ---------------------------------------------------------------------------
# scaling sweeps

_SIZE_FIELD = {"stirring": "n_spheres", "cable": "n_segments"}


@dataclass
class SweepRow:
    size: int
    n_subsystems: int
    n_intra: float
    n_coupling: float
    at_ms: float

    @property
    def x(self) -> float:
        """Regressor: subsystem count plus mean constraint counts."""
        return self.n_subsystems + self.n_intra + self.n_coupling


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    slope: float = 0.0
    intercept: float = 0.0
    r2: float = 0.0


def run_scaling_sweep(scenario: Scenario, sizes: Sequence[int], iters: int = 60, steps: int = 40) -> SweepResult:
    """Mean per-step solver time vs problem size, with a linear fit.

    Sizes override the scenario's size parameter (sphere count or segment
    count). Refuses fewer than 4 sizes: a line through 3 points says nothing.
    """
    if len(sizes) < 4:
        raise ValueError(f"scaling fit needs at least 4 sizes, got {len(sizes)}")
    if scenario.kind not in _SIZE_FIELD:
        raise ValueError(f"scenario kind {scenario.kind!r} has no sweepable size")
    field_name = _SIZE_FIELD[scenario.kind]
    result = SweepResult()
    for size in sizes:
        doc = to_dict(scenario)
        doc["params"][field_name] = int(size)
        doc["name"] = f"{scenario.kind}{size}"
        sized = from_dict(doc)
        record, metrics = run_simulation(sized, solver="subadmm", steps=steps, iters=iters)
        model_subs = len(materialize(sized).world.subsystems)
        result.rows.append(
            SweepRow(
                size=int(size),
                n_subsystems=model_subs,
                n_intra=float(np.mean([m.n_intra for m in metrics])) if metrics else 0.0,
                n_coupling=float(np.mean([m.n_coupling for m in metrics])) if metrics else 0.0,
                at_ms=record.at_ms,
            )
        )
    xs = np.array([r.x for r in result.rows])
    ys = np.array([r.at_ms for r in result.rows])
    fit = scipy.stats.linregress(xs, ys)
    result.slope = float(fit.slope)
    result.intercept = float(fit.intercept)
    result.r2 = float(fit.rvalue**2)
    return result


def write_scaling_csv(result: SweepResult, sink) -> None:
    out = _CsvSink(sink, ["size", "n_subsystems", "n_intra", "n_coupling", "x", "at_ms"])
    for r in result.rows:
        out.row([r.size, r.n_subsystems, r.n_intra, r.n_coupling, r.x, r.at_ms])


def write_bench_csv(records: Sequence[BenchRecord], sink) -> None:
    out = _CsvSink(sink, ["scenario", "solver", "iters", "steps", "at_ms", "aa"])
    for r in records:
        out.row([r.scenario, r.solver, r.iters, r.steps, r.at_ms, r.aa if r.aa is not None else ""])
