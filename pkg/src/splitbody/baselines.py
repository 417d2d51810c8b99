"""Reference solvers over the assembled constraint-space system.

These solve the same per-step problem as the splitting solver but globally:
build the Delassus operator G = J A^-1 J^T and the free velocity term, then
run projected Gauss-Seidel (sequential) or projected Jacobi (simultaneous,
under-relaxed) over the constraint row groups. Dense assembly is intentional;
these exist as oracles and comparison baselines at desk scale, not as fast
paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .constraints import ConstraintSpec, project_friction_cone
from .solver import SolverAbort


@dataclass
class DelassusSystem:
    """Constraint-space normal system plus what is needed to recover velocities.

    ``c`` is the free constraint-space velocity J A^-1 b plus the velocity
    error terms (kinematic bias, hard/contact stabilization). Soft rows keep
    their positional error out of ``c``; it enters through the gain relation
    during the sweeps.
    """

    g: np.ndarray
    c: np.ndarray
    constraints: list[ConstraintSpec]
    row_off: np.ndarray
    j_global: np.ndarray
    a_factors: list
    b_global: np.ndarray
    sub_off: np.ndarray
    contact_step: dict = field(default_factory=dict)  # constraint idx -> PG step size
    strict_contact: bool = False

    @property
    def n_rows(self) -> int:
        return int(self.row_off[-1])

    def recover_velocities(self, lam_rows: np.ndarray) -> list[np.ndarray]:
        """v_i = A_i^-1 (b_i + J_i^T lambda) for every subsystem."""
        rhs = self.b_global + self.j_global.T @ lam_rows
        out = []
        for i, cho in enumerate(self.a_factors):
            sl = slice(self.sub_off[i], self.sub_off[i + 1])
            out.append(scipy.linalg.cho_solve(cho, rhs[sl], check_finite=False))
        return out

    def lambdas(self, lam_rows: np.ndarray) -> list[np.ndarray]:
        return [lam_rows[self.row_off[j] : self.row_off[j + 1]].copy() for j in range(len(self.constraints))]


def build_delassus(
    dynamics: Sequence[tuple[np.ndarray, np.ndarray]],
    constraints: Sequence[ConstraintSpec],
    strict_contact: bool = False,
) -> DelassusSystem:
    """Assemble G = J A^-1 J^T blockwise (exact for block-diagonal A)."""
    nsub = len(dynamics)
    sub_off = np.zeros(nsub + 1, dtype=int)
    for i, (a, _) in enumerate(dynamics):
        sub_off[i + 1] = sub_off[i] + a.shape[0]
    ndof = int(sub_off[-1])
    cons = list(constraints)
    row_off = np.zeros(len(cons) + 1, dtype=int)
    for j, con in enumerate(cons):
        row_off[j + 1] = row_off[j] + con.rows
    n_rows = int(row_off[-1])

    j_global = np.zeros((n_rows, ndof))
    e_vel = np.zeros(n_rows)
    for j, con in enumerate(cons):
        rows = slice(row_off[j], row_off[j + 1])
        for p, blk in zip(con.participants, con.jacobians):
            j_global[rows, sub_off[p] : sub_off[p + 1]] = blk
        if con.bias is not None:
            e_vel[rows] += con.bias
        if con.kind != "soft":
            e_vel[rows] += con.err

    a_factors = []
    b_global = np.zeros(ndof)
    g = np.zeros((n_rows, n_rows))
    c = e_vel.copy()
    for i, (a, b) in enumerate(dynamics):
        try:
            cho = scipy.linalg.cho_factor(np.asarray(a, dtype=float), lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise ValueError(f"subsystem {i} matrix is not positive definite") from exc
        a_factors.append(cho)
        sl = slice(sub_off[i], sub_off[i + 1])
        b_global[sl] = b
        ji = j_global[:, sl]
        if n_rows:
            x = scipy.linalg.cho_solve(cho, ji.T, check_finite=False)
            g += ji @ x
            c += ji @ scipy.linalg.cho_solve(cho, np.asarray(b, dtype=float), check_finite=False)

    sys = DelassusSystem(
        g, c, cons, row_off, j_global, a_factors, b_global, sub_off, strict_contact=strict_contact
    )
    for j, con in enumerate(cons):
        if con.kind == "contact":
            d = g[row_off[j] : row_off[j] + 3, row_off[j] : row_off[j] + 3]
            top = float(np.max(scipy.linalg.eigvalsh(d)))
            sys.contact_step[j] = 1.0 / top if top > 0.0 else 0.0
    return sys


def _local_update(sys: DelassusSystem, j: int, lam_rows: np.ndarray) -> np.ndarray:
    """Exact local solve for row group j holding all other impulses fixed."""
    con = sys.constraints[j]
    rows = slice(sys.row_off[j], sys.row_off[j + 1])
    d = sys.g[rows, rows]
    lam_j = lam_rows[rows]
    sigma = sys.g[rows] @ lam_rows + sys.c[rows]
    free = sigma - d @ lam_j  # constraint-space velocity without j's impulse
    if con.kind == "hard_equality":
        return -np.linalg.solve(d, free)
    if con.kind == "hard_inequality":
        dd = np.diag(d).copy()
        dd[dd == 0.0] = np.inf  # zero diagonal: leave the row untouched
        return np.maximum(0.0, -(free / dd))
    if con.kind == "soft":
        k = np.broadcast_to(np.asarray(con.stiffness, dtype=float), (con.rows,))
        al = np.broadcast_to(np.asarray(con.alpha, dtype=float), (con.rows,))
        lhs = np.eye(con.rows) + (k * al)[:, None] * d
        return np.linalg.solve(lhs, -k * (con.err + al * free))
    step = sys.contact_step[j]
    if step == 0.0:
        return lam_j
    lam = lam_j.copy()
    shift = np.zeros(3)
    for _ in range(40):
        vel = free + d @ lam
        if sys.strict_contact:
            # Signorini-Coulomb normal shift mu*||sigma_t||, re-evaluated from
            # the current iterate so the inner fixed point solves the strict form
            shift[0] = con.mu * float(np.linalg.norm(vel[1:]))
        nxt = project_friction_cone(lam - step * (vel + shift), con.mu)
        if float(np.max(np.abs(nxt - lam))) <= 1e-15 * (1.0 + float(np.max(np.abs(nxt)))):
            lam = nxt
            break
        lam = nxt
    return lam


def pgs_solve(sys: DelassusSystem, iters: int, lam0: Optional[np.ndarray] = None) -> np.ndarray:
    """Sequential sweeps; each row group gets its exact local solve in turn."""
    lam = np.zeros(sys.n_rows) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    for _ in range(iters):
        for j in range(len(sys.constraints)):
            rows = slice(sys.row_off[j], sys.row_off[j + 1])
            lam[rows] = _local_update(sys, j, lam)
    return lam


def pj_solve(
    sys: DelassusSystem,
    iters: int,
    relaxation: float = 0.5,
    lam0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Jacobi variant: all groups solved from the same iterate, then blended."""
    lam = np.zeros(sys.n_rows) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    scale0 = 1.0 + float(np.max(np.abs(lam))) if lam.size else 1.0
    for it in range(iters):
        nxt = np.empty_like(lam)
        for j in range(len(sys.constraints)):
            rows = slice(sys.row_off[j], sys.row_off[j + 1])
            nxt[rows] = _local_update(sys, j, lam)
        lam = (1.0 - relaxation) * lam + relaxation * nxt
        if lam.size and not np.all(np.isfinite(lam)):
            raise SolverAbort("projected-Jacobi iterate became non-finite", it + 1)
        if lam.size and float(np.max(np.abs(lam))) > 1e6 * scale0:
            raise SolverAbort("projected-Jacobi impulses diverged", it + 1)
    return lam
