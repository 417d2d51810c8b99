"""Subsystem-splitting step solver.

Each time step builds per-subsystem SPD blocks (A_i, b_i), picks a scalar
weight beta_i, factorizes A_i + beta_i Jc_i^T Jc_i once, and then alternates

  (a) per-subsystem solves  (A_i + beta_i Jc_i^T Jc_i) v_i = b_i + Jc_i^T (beta_i z_i - u_i),
      followed by the surrogate refresh y_i = beta_i Jc_i v_i + u_i,
  (b) the residual theta = sum_i ||y_i^{l} - y_i^{l-1}||^2 and the stop check,
  (c) matrix-free per-constraint local solves filling the consensus copies z,
  (d) the dual update u_i <- y_i - beta_i z_i,

until theta < threshold or the iteration budget runs out. The terminating
iterate is the post-(a) state; impulses are read from the duals (lambda = -u).

Internally all participant copies (z, u, y) live in one flat array ordered
subsystem by subsystem, intra rows before coupling rows, so phase (a) is a
sparse matvec plus one batched dense solve per distinct subsystem dimension
and phases (c)/(d) are a handful of vectorized kernels. Worker threads only
ever split batched maps over disjoint slices and every reduction runs in a
fixed order, so results are bit-identical for any thread count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse

from .bodies import (
    Subsystem,
    WorldState,
    assemble_subsystem_dynamics,
    fold_soft_constraints,
    integrate_state,
)
from .constraints import ConstraintSpec, constraint_error_report, project_friction_cone

UNCONSTRAINED = None  # sentinel returned by compute_beta for row-free subsystems


class SolverAbort(RuntimeError):
    """Raised when the iteration produces NaNs or diverges."""

    def __init__(self, message: str, iteration: int = -1):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class SolverConfig:
    max_iters: int = 60
    # consensus step sizes scale with beta, so a loose threshold can fire while
    # badly unconverged on small-impulse scenes; default to effectively-off and
    # let max_iters be the budget
    theta_threshold: float = 1e-18
    beta_override: Optional[dict] = None  # subsystem index -> positive scalar
    # multiplies the trace-ratio default; the ratio balances A_i against the
    # stacked rows, which under-weights consensus coupling once a subsystem
    # carries many rows (deep contact stacks converge much faster scaled up)
    beta_scale: float = 1.0
    warm_start: bool = False
    strict_contact: bool = False
    threads: int = 1
    fold_intra_soft: bool = True  # absorb single-subsystem soft rows into (A_i, b_i)
    collect_iteration_errors: bool = False
    divergence_ratio: float = 1e6
    divergence_window: int = 10

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.theta_threshold <= 0.0:
            raise ValueError("theta_threshold must be positive")
        if self.beta_override:
            for i, b in self.beta_override.items():
                if b <= 0.0:
                    raise ValueError(f"beta override for subsystem {i} must be positive")
        if self.beta_scale <= 0.0:
            raise ValueError("beta_scale must be positive")


@dataclass
class StepReport:
    iterations: int = 0
    theta_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    errors: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    budget_exhausted: bool = False
    impulse_disagreement: float = 0.0
    iteration_errors: list = field(default_factory=list)

    @property
    def theta_final(self) -> float:
        return float(self.theta_history[-1]) if len(self.theta_history) else 0.0


def compute_beta(a: np.ndarray, j_stack: np.ndarray):
    """Balanced weight tr(A_i) / tr(Jc_i^T Jc_i); None when there are no rows."""
    j_stack = np.asarray(j_stack, dtype=float)
    if j_stack.size == 0 or j_stack.shape[0] == 0:
        return UNCONSTRAINED
    denom = float(np.sum(j_stack * j_stack))
    if denom == 0.0:
        raise ValueError("all-zero constraint Jacobian gives a degenerate weight")
    return float(np.trace(np.asarray(a, dtype=float))) / denom


class SubsystemFactor:
    """Cached dense Cholesky of A_i + beta_i Jc_i^T Jc_i."""

    def __init__(self, a: np.ndarray, j_stack: np.ndarray, beta: Optional[float]):
        h = np.array(a, dtype=float, copy=True)
        j_stack = np.asarray(j_stack, dtype=float)
        if beta is not UNCONSTRAINED and j_stack.size:
            h += float(beta) * (j_stack.T @ j_stack)
        try:
            self._cho = scipy.linalg.cho_factor(h, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise ValueError("subsystem matrix is not positive definite") from exc
        self.matrix = h

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._cho, np.asarray(rhs, dtype=float), check_finite=False)


def factor_subsystem(a: np.ndarray, j_stack: np.ndarray, beta) -> SubsystemFactor:
    return SubsystemFactor(a, j_stack, beta)


def subsystem_solve(
    factor: SubsystemFactor,
    b: np.ndarray,
    j_stack: np.ndarray,
    beta,
    z: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """Solve phase (a) for one subsystem."""
    rhs = np.asarray(b, dtype=float)
    j_stack = np.asarray(j_stack, dtype=float)
    if beta is not UNCONSTRAINED and j_stack.size:
        rhs = rhs + j_stack.T @ (float(beta) * np.asarray(z) - np.asarray(u))
    return factor.solve(rhs)


class SolverState:
    """All per-step solver data in flat-array form (see module docstring)."""

    def __init__(
        self,
        world: WorldState,
        constraints: Sequence[ConstraintSpec],
        config: SolverConfig,
        dynamics: Optional[Sequence[tuple[np.ndarray, np.ndarray]]] = None,
    ):
        self.world = world
        self.constraints = list(constraints)
        self.config = config
        subs = world.subsystems
        self.nsub = len(subs)
        self.sub_off = np.zeros(self.nsub + 1, dtype=int)
        for i, s in enumerate(subs):
            self.sub_off[i + 1] = self.sub_off[i] + s.ndof
        self.ndof = int(self.sub_off[-1])

        if dynamics is None:
            dynamics = [assemble_subsystem_dynamics(s, world) for s in subs]
        self.a_blocks = [np.asarray(a, dtype=float) for a, _ in dynamics]
        self.b_global = np.concatenate([np.asarray(b, dtype=float) for _, b in dynamics]) if subs else np.zeros(0)

        self._build_layout()
        self._compute_betas()
        self._factorize()

        self.v_hat = np.zeros(self.ndof)
        for i in self.v_free_idx:
            # row-free subsystems never change during the iteration
            try:
                cho = scipy.linalg.cho_factor(self.a_blocks[i], lower=True, check_finite=False)
            except scipy.linalg.LinAlgError as exc:
                raise ValueError(f"subsystem {i} dynamics matrix is not positive definite") from exc
            sl = slice(self.sub_off[i], self.sub_off[i + 1])
            self.v_hat[sl] = scipy.linalg.cho_solve(cho, self.b_global[sl], check_finite=False)
        self.z = self.j_part @ self._initial_velocity() if self.n_part else np.zeros(0)
        self.u = np.zeros(self.n_part)
        self.y = self.beta_row * self.z + self.u
        self.y_prev = self.y.copy()
        self.lambda_rows = np.zeros(self.n_rows)
        self.theta_history: list[float] = []
        self._executor = None
        if config.threads > 1:
            self._executor = ThreadPoolExecutor(max_workers=config.threads)

    # ---- construction ------------------------------------------------

    def _initial_velocity(self) -> np.ndarray:
        if not self.nsub:
            return np.zeros(0)
        return np.concatenate([s.velocity() for s in self.world.subsystems])

    def _build_layout(self) -> None:
        cons = self.constraints
        ncon = len(cons)
        self.con_row_off = np.zeros(ncon + 1, dtype=int)
        for j, con in enumerate(cons):
            self.con_row_off[j + 1] = self.con_row_off[j] + con.rows
        self.n_rows = int(self.con_row_off[-1])

        # participant rows, grouped per subsystem: intra rows then coupling rows
        touching: list[list[tuple[int, int]]] = [[] for _ in range(self.nsub)]
        for j, con in enumerate(cons):
            for slot, p in enumerate(con.participants):
                if p < 0 or p >= self.nsub:
                    raise ValueError(f"constraint {j} references unknown subsystem {p}")
                touching[p].append((j, slot))
        for lst in touching:
            lst.sort(key=lambda js: (len(cons[js[0]].participants) > 1, js[0]))

        part_sub: list[int] = []
        part_row: list[int] = []  # global constraint-row index per participant row
        self.part_slice_of: dict[tuple[int, int], slice] = {}  # (con, slot) -> rows in part space
        self.sub_part_slice: list[slice] = []
        self.j_blocks: list[np.ndarray] = []  # stacked Jc_i per subsystem
        jp_data: list[np.ndarray] = []
        jp_cols: list[np.ndarray] = []
        pos = 0
        for i in range(self.nsub):
            start = pos
            c0 = self.sub_off[i]
            ndof_i = self.sub_off[i + 1] - c0
            blocks = []
            for j, slot in touching[i]:
                con = cons[j]
                r0 = self.con_row_off[j]
                self.part_slice_of[(j, slot)] = slice(pos, pos + con.rows)
                part_sub.extend([i] * con.rows)
                part_row.extend(range(r0, r0 + con.rows))
                blk = con.jacobians[slot]
                if blk.shape[1] != ndof_i:
                    raise ValueError(
                        f"constraint {j} block for subsystem {i} has {blk.shape[1]} columns, expected {ndof_i}"
                    )
                blocks.append(blk)
                jp_data.append(blk.reshape(-1))
                jp_cols.append(np.tile(np.arange(c0, c0 + ndof_i), con.rows))
                pos += con.rows
            self.sub_part_slice.append(slice(start, pos))
            self.j_blocks.append(np.concatenate(blocks, axis=0) if blocks else np.zeros((0, ndof_i)))
        self.n_part = pos
        self.part_sub = np.asarray(part_sub, dtype=int)
        self.part_row = np.asarray(part_row, dtype=int)

        if self.n_part:
            data = np.concatenate(jp_data)
            cols = np.concatenate(jp_cols)
            counts = np.zeros(self.n_part + 1, dtype=int)
            row_dofs = self.sub_off[self.part_sub + 1] - self.sub_off[self.part_sub]
            counts[1:] = np.cumsum(row_dofs)
            self.j_part = scipy.sparse.csr_matrix((data, cols, counts), shape=(self.n_part, self.ndof))
            ones = np.ones(self.n_part)
            self.gather = scipy.sparse.csr_matrix(
                (ones, (self.part_row, np.arange(self.n_part))), shape=(self.n_rows, self.n_part)
            )
        else:
            self.j_part = scipy.sparse.csr_matrix((0, self.ndof))
            self.gather = scipy.sparse.csr_matrix((0, 0))

        # per-kind row indices in constraint-row space
        ineq, eq, soft, soft_k, soft_a = [], [], [], [], []
        contact_groups, contact_mu = [], []
        eff = np.zeros(self.n_rows)
        for j, con in enumerate(cons):
            r0 = self.con_row_off[j]
            eff[r0 : r0 + con.rows] = con.solver_error()
            if con.kind == "hard_inequality":
                ineq.extend(range(r0, r0 + con.rows))
            elif con.kind == "hard_equality":
                eq.extend(range(r0, r0 + con.rows))
            elif con.kind == "soft":
                soft.extend(range(r0, r0 + con.rows))
                soft_k.extend(np.broadcast_to(np.asarray(con.stiffness, dtype=float), (con.rows,)))
                soft_a.extend(np.broadcast_to(np.asarray(con.alpha, dtype=float), (con.rows,)))
            else:
                contact_groups.append([r0, r0 + 1, r0 + 2])
                contact_mu.append(con.mu)
        self.ineq_idx = np.asarray(ineq, dtype=int)
        self.eq_idx = np.asarray(eq, dtype=int)
        self.soft_idx = np.asarray(soft, dtype=int)
        self.soft_k = np.asarray(soft_k)
        self.soft_alpha = np.asarray(soft_a)
        self.contact_idx = np.asarray(contact_groups, dtype=int).reshape(-1, 3)
        self.contact_mu = np.asarray(contact_mu)
        self.eff_err = eff

    def _compute_betas(self) -> None:
        override = self.config.beta_override or {}
        self.beta = np.full(self.nsub, np.nan)
        for i in range(self.nsub):
            ji = self.j_blocks[i]
            if i in override:
                if ji.shape[0] == 0:
                    raise ValueError(f"beta override given for unconstrained subsystem {i}")
                self.beta[i] = float(override[i])
            else:
                b = compute_beta(self.a_blocks[i], ji)
                if b is not UNCONSTRAINED:
                    self.beta[i] = b * self.config.beta_scale
        self.constrained = ~np.isnan(self.beta)
        self.beta_row = self.beta[self.part_sub] if self.n_part else np.zeros(0)
        self.inv_beta_row = 1.0 / self.beta_row if self.n_part else np.zeros(0)
        self.w_rows = self.gather @ self.inv_beta_row if self.n_part else np.zeros(0)

    def _factorize(self) -> None:
        """Batch Cholesky factors per distinct subsystem dimension."""
        self.groups: list[tuple[np.ndarray, np.ndarray]] = []  # (dof index matrix, H^-1 stack)
        self.v_free_idx: list[int] = []
        by_dim: dict[int, list[int]] = {}
        for i in range(self.nsub):
            d = self.sub_off[i + 1] - self.sub_off[i]
            if not self.constrained[i]:
                self.v_free_idx.append(i)
                continue
            by_dim.setdefault(d, []).append(i)
        for d, ids in sorted(by_dim.items()):
            h = np.empty((len(ids), d, d))
            for k, i in enumerate(ids):
                ji = self.j_blocks[i]
                h[k] = self.a_blocks[i] + self.beta[i] * (ji.T @ ji)
            try:
                low = np.linalg.cholesky(h)
            except np.linalg.LinAlgError as exc:
                raise ValueError("subsystem matrix is not positive definite") from exc
            linv = np.linalg.solve(low, np.tile(np.eye(d), (len(ids), 1, 1)))
            hinv = np.einsum("bji,bjk->bik", linv, linv)
            offs = self.sub_off[np.asarray(ids, dtype=int)]
            dof_idx = offs[:, None] + np.arange(d)[None, :]
            self.groups.append((dof_idx, hinv))

    # ---- iteration phases --------------------------------------------

    def _batched_apply(self, hinv: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        threads = self.config.threads
        n = rhs.shape[0]
        if self._executor is None or n < 2 * threads:
            return np.einsum("bij,bj->bi", hinv, rhs)
        out = np.empty_like(rhs)
        bounds = np.linspace(0, n, threads + 1, dtype=int)

        def work(lo: int, hi: int) -> None:
            np.einsum("bij,bj->bi", hinv[lo:hi], rhs[lo:hi], out=out[lo:hi])

        futures = [
            self._executor.submit(work, lo, hi)
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        for f in futures:
            f.result()
        return out

    def update_vhat_and_y(self) -> float:
        """Phases (a) and (b): subsystem solves, y refresh, residual."""
        rhs_global = self.b_global.copy()
        if self.n_part:
            rhs_global += self.j_part.T @ (self.beta_row * self.z - self.u)
        for dof_idx, hinv in self.groups:
            sol = self._batched_apply(hinv, rhs_global[dof_idx])
            self.v_hat[dof_idx.reshape(-1)] = sol.reshape(-1)
        if not np.all(np.isfinite(self.v_hat)):
            raise SolverAbort("non-finite subsystem velocities", len(self.theta_history) + 1)
        self.y_prev = self.y
        if self.n_part:
            self.y = self.beta_row * (self.j_part @ self.v_hat) + self.u
        theta = self.residual()
        self.theta_history.append(theta)
        self._divergence_guard()
        return theta

    def residual(self) -> float:
        dy = self.y - self.y_prev
        return float(dy @ dy)

    def _divergence_guard(self) -> None:
        hist = self.theta_history
        win = self.config.divergence_window
        if len(hist) > win:
            floor = max(hist[-1 - win], self.config.theta_threshold)
            if hist[-1] > self.config.divergence_ratio * floor:
                raise SolverAbort(
                    f"residual grew from {hist[-1 - win]:.3e} to {hist[-1]:.3e} "
                    f"over {win} iterations",
                    len(hist),
                )

    def update_z_u(self) -> None:
        """Phases (c) and (d): local solves and the dual update."""
        if not self.n_part:
            return
        s_rows = self.gather @ (self.inv_beta_row * self.y)
        lam = self.lambda_rows
        err = self.eff_err
        if self.eq_idx.size:
            idx = self.eq_idx
            lam[idx] = -(s_rows[idx] + err[idx]) / self.w_rows[idx]
        if self.ineq_idx.size:
            idx = self.ineq_idx
            lam[idx] = np.maximum(0.0, -(s_rows[idx] + err[idx]) / self.w_rows[idx])
        if self.soft_idx.size:
            idx = self.soft_idx
            lam[idx] = -self.soft_k * (err[idx] + self.soft_alpha * s_rows[idx]) / (
                1.0 + self.w_rows[idx] * self.soft_alpha * self.soft_k
            )
        if self.contact_idx.size:
            idx = self.contact_idx
            e_c = err[idx]
            s_c = s_rows[idx]
            w_c = self.w_rows[idx[:, 0]][:, None]
            if self.config.strict_contact:
                # Signorini-Coulomb normal shift mu*||sigma_t||, resolved to
                # self-consistency with the local impulse: sigma_t = s_t + w*lam_t
                e_c = e_c.copy()
                lam_c = lam[idx]
                for _ in range(8):
                    slip = np.linalg.norm(s_c[:, 1:] + w_c * lam_c[:, 1:], axis=1)
                    e_c[:, 0] = err[idx][:, 0] + self.contact_mu * slip
                    nxt = project_friction_cone(-(s_c + e_c) / w_c, self.contact_mu)
                    if float(np.max(np.abs(nxt - lam_c))) <= 1e-14 * (1.0 + float(np.max(np.abs(nxt)))):
                        lam_c = nxt
                        break
                    lam_c = nxt
                lam[idx] = lam_c
            else:
                lam[idx] = project_friction_cone(-(s_c + e_c) / w_c, self.contact_mu)
        lam_part = lam[self.part_row]
        self.z = self.inv_beta_row * (self.y + lam_part)
        self.u = self.y - self.beta_row * self.z

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None


def admm_iterate(state: SolverState, config: Optional[SolverConfig] = None) -> float:
    """One full iteration cycle; returns the residual theta measured in (b)."""
    theta = state.update_vhat_and_y()
    state.update_z_u()
    return theta


def residual(state: SolverState) -> float:
    return state.residual()


def extract_impulses(state: SolverState):
    """Read per-constraint impulses from the duals (lambda_j = -u_{i,j}).

    Returns (lambdas, generalized, disagreement): one impulse vector per
    constraint, the stacked generalized impulse Jc_i^T lambda per subsystem,
    and the largest cross-participant disagreement.
    """
    lambdas: list[np.ndarray] = []
    disagreement = 0.0
    for j, con in enumerate(state.constraints):
        views = [-state.u[state.part_slice_of[(j, slot)]] for slot in range(len(con.participants))]
        lambdas.append(views[0].copy())
        if len(views) > 1:
            stack = np.stack(views)
            disagreement = max(disagreement, float(np.max(stack.max(axis=0) - stack.min(axis=0))))
    if state.n_part:
        gen_flat = -(state.j_part.T @ state.u)
    else:
        gen_flat = np.zeros(state.ndof)
    generalized = [gen_flat[state.sub_off[i] : state.sub_off[i + 1]] for i in range(state.nsub)]
    return lambdas, generalized, disagreement


def run_iterations(state: SolverState) -> StepReport:
    """The iterate/terminate loop of one step (integration not included)."""
    cfg = state.config
    report = StepReport()
    # the first theta cannot certify a fixed point when iterates arrive
    # pre-converged (warm start): local solves have not yet seen this step's
    # error terms, so require one full cycle before an early exit
    min_iters = 2 if state.n_part else 1
    for l in range(1, cfg.max_iters + 1):
        theta = state.update_vhat_and_y()
        if (theta < cfg.theta_threshold and l >= min_iters) or l == cfg.max_iters:
            report.iterations = l
            report.budget_exhausted = theta >= cfg.theta_threshold
            break
        state.update_z_u()
        if cfg.collect_iteration_errors:
            lams, _, _ = extract_impulses(state)
            vh = [state.v_hat[state.sub_off[i] : state.sub_off[i + 1]] for i in range(state.nsub)]
            report.iteration_errors.append(constraint_error_report(state.constraints, vh, lams))
    report.theta_history = np.asarray(state.theta_history)
    return report


def split_foldable(constraints: Sequence[ConstraintSpec]) -> tuple[list[int], list[int]]:
    """Indices of (foldable, active) constraints: soft rows on one subsystem fold."""
    fold_idx, act_idx = [], []
    for j, con in enumerate(constraints):
        if con.kind == "soft" and len(con.participants) == 1:
            fold_idx.append(j)
        else:
            act_idx.append(j)
    return fold_idx, act_idx


def fold_dynamics(dynamics, constraints, fold_idx):
    """Absorb the selected soft constraints into their subsystem (A_i, b_i)."""
    by_sub: dict[int, list] = {}
    for j in fold_idx:
        by_sub.setdefault(constraints[j].participants[0], []).append(constraints[j])
    out = list(dynamics)
    for si, group in by_sub.items():
        out[si] = fold_soft_constraints(out[si][0], out[si][1], group)
    return out


def implied_soft_impulse(con: ConstraintSpec, v_hat: np.ndarray) -> np.ndarray:
    """Impulse a folded soft constraint exerts at the solved velocity."""
    sigma = con.jacobians[0] @ v_hat
    if con.bias is not None:
        sigma = sigma + con.bias
    k = np.broadcast_to(np.asarray(con.stiffness, dtype=float), sigma.shape)
    return -(k * (np.atleast_1d(con.err) + con.alpha * sigma))


def merge_folded_impulses(constraints, fold_idx, act_idx, lambdas_active, v_hats):
    """Re-interleave active-solver impulses with implied folded impulses."""
    lambdas: list = [None] * len(constraints)
    for j, lam in zip(act_idx, lambdas_active):
        lambdas[j] = lam
    for j in fold_idx:
        con = constraints[j]
        lambdas[j] = implied_soft_impulse(con, v_hats[con.participants[0]])
    return lambdas


def solve_step(
    world: WorldState,
    constraints: Sequence[ConstraintSpec],
    config: Optional[SolverConfig] = None,
    external_impulses: Optional[dict] = None,
    warm_cache: Optional[dict] = None,
):
    """Run one full time step: assemble, factor, iterate, integrate.

    Returns (v_hats, lambdas, report) with one velocity vector per subsystem
    and one impulse vector per constraint. ``external_impulses`` maps a
    subsystem index to per-body impulse 6-vectors. ``warm_cache`` maps
    constraint keys to impulses from the previous step and is updated in
    place when warm starting is enabled.
    """
    config = config or SolverConfig()
    constraints = list(constraints)
    t0 = time.perf_counter()
    dynamics = [
        assemble_subsystem_dynamics(s, world, external_impulses.get(s.index) if external_impulses else None)
        for s in world.subsystems
    ]
    fold_idx: list[int] = []
    act_idx = list(range(len(constraints)))
    if config.fold_intra_soft:
        fold_idx, act_idx = split_foldable(constraints)
        if fold_idx:
            dynamics = fold_dynamics(dynamics, constraints, fold_idx)
    active = [constraints[j] for j in act_idx]
    t1 = time.perf_counter()
    state = SolverState(world, active, config, dynamics)
    if config.warm_start and warm_cache:
        for j, con in enumerate(state.constraints):
            lam_prev = warm_cache.get(con.key) if con.key is not None else None
            if lam_prev is None:
                continue
            for slot in range(len(con.participants)):
                sl = state.part_slice_of[(j, slot)]
                state.u[sl] = -lam_prev
        state.y = state.beta_row * state.z + state.u
        state.y_prev = state.y.copy()
    t2 = time.perf_counter()
    try:
        report = run_iterations(state)
        v_hats = [state.v_hat[state.sub_off[i] : state.sub_off[i + 1]].copy() for i in range(state.nsub)]
        lambdas, _, disagreement = extract_impulses(state)
        report.impulse_disagreement = disagreement
    finally:
        state.close()
    t3 = time.perf_counter()
    for sub, vh in zip(world.subsystems, v_hats):
        integrate_state(sub, vh, world.dt)
    world.step_index += 1
    if fold_idx:
        lambdas = merge_folded_impulses(constraints, fold_idx, act_idx, lambdas, v_hats)
    report.errors = constraint_error_report(constraints, v_hats, lambdas)
    if config.warm_start and warm_cache is not None:
        for con, lam in zip(constraints, lambdas):
            if con.key is not None:
                warm_cache[con.key] = lam
    report.timings = {
        "assembly_ms": (t1 - t0) * 1e3,
        "factorization_ms": (t2 - t1) * 1e3,
        "iteration_ms": (t3 - t2) * 1e3,
        "total_ms": (t3 - t0) * 1e3,
    }
    return v_hats, lambdas, report
