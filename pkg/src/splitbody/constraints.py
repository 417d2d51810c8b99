"""Constraint kinds, their defining relations, and the matrix-free local solves.

Every constraint couples one or more subsystems through per-subsystem Jacobian
blocks. During the splitting iteration each participant i carries a surrogate
y_{i,j} = beta_i x_{i,j} + u_{i,j}; the local solve finds the impulse lambda_j
and the consensus copies z_{i,j} = (y_{i,j} + lambda_j) / beta_i. All four
kinds reduce to scalar-weight arithmetic on s = sum_i y_{i,j}/beta_i and
w = sum_i 1/beta_i:

  hard inequality:  lambda = max(0, -(s + e)/w)
  hard equality:    lambda = -(s + e)/w
  soft:             lambda = -k (e + alpha s) / (1 + w alpha k)
  contact:          lambda = Pi_K(-(s + e)/w), K the Coulomb cone

The solves are pure functions of their inputs; nothing here mutates shared
state, so constraints can be resolved in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

KINDS = ("soft", "hard_inequality", "hard_equality", "contact")


@dataclass
class ConstraintSpec:
    """One scalar or 3-row constraint acting on a set of subsystems.

    ``err`` is the error term of the defining relation: velocity units for
    hard and contact rows (stabilization already applied), positional for soft
    rows. ``bias`` carries the velocity contribution of prescribed-motion
    bodies and is None when absent. ``key`` is a stable identity used for
    warm starting across steps.
    """

    kind: str
    participants: tuple[int, ...]
    jacobians: tuple[np.ndarray, ...]
    err: np.ndarray
    bias: Optional[np.ndarray] = None
    stiffness: object = 0.0  # scalar, or per-row array on soft constraints
    alpha: object = 1.0
    mu: float = 0.0
    key: object = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if len(self.participants) < 1:
            raise ValueError("constraint needs at least one participant")
        if len(self.jacobians) != len(self.participants):
            raise ValueError("one Jacobian block per participant required")
        self.participants = tuple(int(p) for p in self.participants)
        if len(set(self.participants)) != len(self.participants):
            raise ValueError("participants must be distinct subsystems")
        self.jacobians = tuple(np.atleast_2d(np.asarray(j, dtype=float)) for j in self.jacobians)
        self.err = np.atleast_1d(np.asarray(self.err, dtype=float))
        if self.bias is not None:
            self.bias = np.atleast_1d(np.asarray(self.bias, dtype=float))
        rows = self.jacobians[0].shape[0]
        if any(j.shape[0] != rows for j in self.jacobians):
            raise ValueError("participant blocks disagree on row count")
        if self.err.shape != (rows,):
            raise ValueError("error vector length must equal the row count")
        if self.kind == "contact":
            if rows != 3:
                raise ValueError("contact constraints carry 3 rows (normal, 2 tangents)")
            if self.mu < 0.0:
                raise ValueError("friction coefficient must be nonnegative")
        if self.kind == "soft":
            # scalar or per-row gains; normalized to per-row arrays
            self.stiffness = np.broadcast_to(np.asarray(self.stiffness, dtype=float), (rows,)).copy()
            self.alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (rows,)).copy()
            if np.any(self.stiffness < 0.0):
                raise ValueError("soft stiffness must be nonnegative")
            if np.any(self.alpha <= 0.0):
                raise ValueError("soft alpha must be positive")

    @property
    def rows(self) -> int:
        return self.jacobians[0].shape[0]

    def solver_error(self) -> np.ndarray:
        """Effective error with the kinematic bias folded in."""
        if self.bias is None:
            return self.err
        if self.kind == "soft":
            return self.err + self.alpha * self.bias
        return self.err + self.bias

    def relative_velocity(self, v_hats: Sequence[np.ndarray]) -> np.ndarray:
        """sum_i J_i v_hat_i plus the kinematic bias."""
        w = np.zeros(self.rows)
        for p, j in zip(self.participants, self.jacobians):
            w += j @ v_hats[p]
        if self.bias is not None:
            w = w + self.bias
        return w


def _weights(ys, betas):
    betas = [float(b) for b in betas]
    if any(b <= 0.0 for b in betas):
        raise ValueError("beta weights must be positive")
    w = sum(1.0 / b for b in betas)
    s = sum(np.asarray(y, dtype=float) / b for y, b in zip(ys, betas))
    return s, w, betas


def local_solve_hard_inequality(ys, betas, e):
    """Unilateral row: 0 <= lambda complementary to sum(z) + e >= 0."""
    s, w, betas = _weights(ys, betas)
    lam = max(0.0, -(float(s) + float(e)) / w)
    zs = [(float(y) + lam) / b for y, b in zip(ys, betas)]
    return lam, zs


def local_solve_hard_equality(ys, betas, e):
    """Bilateral row: sum(z) + e = 0, multiplier free."""
    s, w, betas = _weights(ys, betas)
    lam = -(float(s) + float(e)) / w
    zs = [(float(y) + lam) / b for y, b in zip(ys, betas)]
    return lam, zs


def local_solve_soft(ys, betas, e, k, alpha):
    """Regularized row satisfying lambda = -k (e + alpha sum(z)) exactly."""
    if k < 0.0 or alpha <= 0.0:
        raise ValueError("soft solve needs k >= 0 and alpha > 0")
    s, w, betas = _weights(ys, betas)
    lam = -k * (float(e) + alpha * float(s)) / (1.0 + w * alpha * k)
    zs = [(float(y) + lam) / b for y, b in zip(ys, betas)]
    return lam, zs


def project_friction_cone(c: np.ndarray, mu) -> np.ndarray:
    """Euclidean projection onto K = {(l_n, l_t): ||l_t|| <= mu l_n}.

    Batched over leading dimensions; component 0 is the normal.
    """
    c = np.asarray(c, dtype=float)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), c.shape[:-1])
    cn = c[..., 0]
    ct = c[..., 1:]
    ctn = np.linalg.norm(ct, axis=-1)
    inside = ctn <= mu * cn
    polar = mu * ctn + cn <= 0.0
    ln_slide = (mu * ctn + cn) / (mu * mu + 1.0)
    safe = np.where(ctn > 0.0, ctn, 1.0)
    lt_slide = (mu * ln_slide / safe)[..., None] * ct
    out = np.concatenate([ln_slide[..., None], lt_slide], axis=-1)
    out = np.where(polar[..., None], 0.0, out)
    out = np.where(inside[..., None], c, out)
    return out[0] if single else out


def local_solve_contact(ys, betas, e, mu):
    """Frictional contact via cone projection of the consensus candidate."""
    if mu < 0.0:
        raise ValueError("friction coefficient must be nonnegative")
    s, w, betas = _weights(ys, betas)
    c = -(s + np.asarray(e, dtype=float)) / w
    lam = project_friction_cone(c, mu)
    zs = [(np.asarray(y, dtype=float) + lam) / b for y, b in zip(ys, betas)]
    return lam, zs


def fischer_burmeister(a, b):
    """phi(a, b) = a + b - sqrt(a^2 + b^2); zero iff 0 <= a complementary to b >= 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a + b - np.hypot(a, b)


def tangent_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangents for unit normals, batched.

    The helper axis is the one following the normal's largest component, which
    keeps the cross product well conditioned for every input.
    """
    n = np.asarray(normal, dtype=float)
    single = n.ndim == 1
    n = np.atleast_2d(n)
    k = np.argmax(np.abs(n), axis=-1)
    helper = np.zeros_like(n)
    helper[np.arange(n.shape[0]), (k + 1) % 3] = 1.0
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(n, t1)
    if single:
        return t1[0], t2[0]
    return t1, t2


def make_contact_error(gap, erp, t, v_kin_bias=0.0, slop=0.0, v_max_depen=np.inf, approach_speed=0.0):
    """Velocity-level error for a contact normal row.

    Penetration beyond ``slop`` is pushed out at erp * depth / t, capped at
    ``v_max_depen``; separated contacts get no stabilization. The prescribed
    -J.v_kin term rides along so driven bodies push correctly.

    Restitution is fixed to zero on the end-of-step velocity: the constraint
    acts on the midpoint velocity, so blocking the midpoint at zero would
    reflect an incoming normal speed instead of absorbing it. Half the
    approaching relative normal speed is admitted back into the error term,
    which lands the end-of-step relative velocity at the stabilization target
    rather than at the mirrored impact speed.
    """
    if t <= 0.0:
        raise ValueError("step size must be positive")
    if not 0.0 <= erp <= 1.0:
        raise ValueError("erp must lie in [0, 1]")
    gap = np.asarray(gap, dtype=float)
    depen = np.minimum(erp * np.maximum(0.0, -(gap + slop)) / t, v_max_depen)
    impact = -np.minimum(0.0, np.asarray(approach_speed, dtype=float)) / 2.0
    return impact - depen - np.asarray(v_kin_bias, dtype=float)


def constraint_error_report(
    constraints: Sequence[ConstraintSpec],
    v_hats: Sequence[np.ndarray],
    lambdas: Sequence[np.ndarray],
) -> dict:
    """Score a converged step against each kind's defining relation.

    Complementarity rows use the Fischer-Burmeister function, contact tangents
    the maximal-dissipation alignment residual, equality and soft rows the
    absolute residual of their defining equations. Returns the Euclidean norm
    per kind plus the overall norm.
    """
    buckets: dict[str, list[np.ndarray]] = {k: [] for k in KINDS}
    for con, lam in zip(constraints, lambdas):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        w_rel = con.relative_velocity(v_hats)
        if con.kind == "hard_inequality":
            sigma = w_rel + con.err
            buckets[con.kind].append(fischer_burmeister(lam, sigma))
        elif con.kind == "hard_equality":
            buckets[con.kind].append(w_rel + con.err)
        elif con.kind == "soft":
            resid = lam + con.stiffness * (con.err + con.alpha * w_rel)
            buckets[con.kind].append(resid)
        else:
            sigma = w_rel + con.err
            phi_n = fischer_burmeister(lam[0], sigma[0])
            delta = np.linalg.norm(sigma[1:])
            slip = delta * lam[1:] + con.mu * lam[0] * sigma[1:]
            buckets[con.kind].append(np.concatenate([[phi_n], slip]))
    report = {}
    total = 0.0
    for kind in KINDS:
        vals = np.concatenate(buckets[kind]) if buckets[kind] else np.zeros(0)
        sq = float(vals @ vals)
        report[kind] = np.sqrt(sq)
        total += sq
    report["total"] = float(np.sqrt(total))
    return report
