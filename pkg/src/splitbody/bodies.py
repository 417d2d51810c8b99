"""Generalized state containers and per-subsystem dynamics assembly.

A subsystem is either an ordered list of rigid bodies (6 DOF each, world-frame
linear and angular velocity) or a single block of point masses (3 DOF each).
Each step the subsystem contributes an SPD matrix A_i and a vector b_i such
that the unconstrained midpoint update solves A_i v_hat = b_i, with v_hat the
representative velocity (v_k + v_{k+1}) / 2 and all multipliers in impulse
units (N*s).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .rotation import quat_from_rotvec, quat_multiply, quat_normalize, quat_to_matrix

Driver = Callable[[float, float], np.ndarray]  # (time, dt) -> 6-vector step velocity


@dataclass
class RigidBody:
    """Single rigid body in maximal coordinates.

    ``body_inertia`` is the 3x3 inertia tensor in the body frame; the world
    tensor is recomputed from the orientation whenever dynamics are assembled.
    Kinematic bodies follow a prescribed ``driver`` velocity and are excluded
    from the solver unknowns.
    """

    name: str
    mass: float
    body_inertia: np.ndarray
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    lin_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kinematic: bool = False
    driver: Optional[Driver] = None
    shape: object = None

    def __post_init__(self) -> None:
        self.body_inertia = np.asarray(self.body_inertia, dtype=float)
        self.position = np.asarray(self.position, dtype=float).copy()
        self.orientation = np.asarray(self.orientation, dtype=float).copy()
        self.lin_vel = np.asarray(self.lin_vel, dtype=float).copy()
        self.ang_vel = np.asarray(self.ang_vel, dtype=float).copy()

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def world_inertia(self) -> np.ndarray:
        r = self.rotation_matrix()
        return r @ self.body_inertia @ r.T

    def step_velocity(self, time: float, dt: float) -> np.ndarray:
        """Representative 6-velocity over [time, time+dt] for kinematic bodies."""
        if self.driver is None:
            return np.zeros(6)
        return np.asarray(self.driver(time, dt), dtype=float)


@dataclass
class PointMassBlock:
    """Block of point masses sharing one generalized-coordinate vector (3 DOF each)."""

    positions: np.ndarray  # (n, 3)
    velocities: np.ndarray  # (n, 3)
    masses: np.ndarray  # (n,)

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float).copy()
        self.velocities = np.asarray(self.velocities, dtype=float).copy()
        self.masses = np.asarray(self.masses, dtype=float).copy()
        if np.any(self.masses <= 0.0):
            raise ValueError("point masses must be positive")

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass
class Subsystem:
    """One independently factorized block of the multibody system."""

    index: int
    bodies: list[RigidBody] = field(default_factory=list)
    block: Optional[PointMassBlock] = None

    def __post_init__(self) -> None:
        if self.block is not None and self.bodies:
            raise ValueError("subsystem holds either rigid bodies or a point block, not both")

    @property
    def ndof(self) -> int:
        if self.block is not None:
            return 3 * self.block.count
        return 6 * len(self.bodies)

    def velocity(self) -> np.ndarray:
        """Current generalized velocity v_k, stacked."""
        if self.block is not None:
            return self.block.velocities.reshape(-1).copy()
        out = np.empty(self.ndof)
        for i, body in enumerate(self.bodies):
            out[6 * i : 6 * i + 3] = body.lin_vel
            out[6 * i + 3 : 6 * i + 6] = body.ang_vel
        return out


@dataclass
class WorldState:
    subsystems: list[Subsystem] = field(default_factory=list)
    kinematic_bodies: list[RigidBody] = field(default_factory=list)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    dt: float = 0.01
    step_index: int = 0

    def __post_init__(self) -> None:
        self.gravity = np.asarray(self.gravity, dtype=float)
        if self.dt <= 0.0:
            raise ValueError("step size must be positive")

    @property
    def time(self) -> float:
        return self.step_index * self.dt

    def add_subsystem(self, sub: Subsystem) -> Subsystem:
        self.subsystems.append(sub)
        return sub

    def dynamic_dim(self) -> int:
        return sum(s.ndof for s in self.subsystems)


def _check_spd3(m: np.ndarray, what: str) -> None:
    if not np.allclose(m, m.T, atol=1e-12):
        raise ValueError(f"{what} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{what} must be positive definite") from exc


def assemble_subsystem_dynamics(
    sub: Subsystem,
    world: WorldState,
    external_impulses: Optional[Sequence[np.ndarray]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Build (A_i, b_i) for one subsystem at the current state.

    A_i v_hat = b_i reproduces the midpoint discretization with
    v_{k+1} = 2 v_hat - v_k. Blocks are 2m I and 2 R I_b R^T per body; b_i
    carries the momentum terms, the t-scaled gravity/external forces, the
    explicit gyroscopic impulse -t (w x I_w w), and any external impulses.
    """
    t = world.dt
    g = world.gravity
    if sub.block is not None:
        blk = sub.block
        m3 = np.repeat(blk.masses, 3)
        a = np.diag(2.0 * m3)
        b = 2.0 * m3 * blk.velocities.reshape(-1) + t * np.tile(g, blk.count) * m3
        if external_impulses is not None:
            b = b + np.asarray(external_impulses, dtype=float).reshape(-1)
        return a, b

    n = sub.ndof
    a = np.zeros((n, n))
    b = np.zeros(n)
    for i, body in enumerate(sub.bodies):
        if body.kinematic:
            raise ValueError(f"kinematic body {body.name!r} cannot join a dynamic subsystem")
        if body.mass <= 0.0:
            raise ValueError(f"body {body.name!r} must have positive mass")
        _check_spd3(body.body_inertia, f"inertia of body {body.name!r}")
        ib = body.body_inertia
        d = ib[0, 0]
        isotropic = (
            ib[0, 1] == 0.0 and ib[0, 2] == 0.0 and ib[1, 2] == 0.0
            and ib[1, 1] == d and ib[2, 2] == d
        )
        iw = ib if isotropic else body.world_inertia()
        sl_lin = slice(6 * i, 6 * i + 3)
        sl_ang = slice(6 * i + 3, 6 * i + 6)
        a[sl_lin, sl_lin] = 2.0 * body.mass * np.eye(3)
        a[sl_ang, sl_ang] = 2.0 * iw
        b[sl_lin] = 2.0 * body.mass * body.lin_vel + t * body.mass * g
        if isotropic:
            # omega x I omega = 0: the gyroscopic impulse vanishes identically
            b[sl_ang] = 2.0 * d * body.ang_vel
        else:
            b[sl_ang] = 2.0 * iw @ _conserving_vhat_ang(iw, body.ang_vel, t)
        if external_impulses is not None:
            b[6 * i : 6 * i + 6] += np.asarray(external_impulses[i], dtype=float)
    return a, b


def _conserving_vhat_ang(iw: np.ndarray, w: np.ndarray, t: float) -> np.ndarray:
    """Free-body midpoint angular velocity whose torque matches -t (w x Iw w).

    Solves 2 v - w = R(t v) Iw^-1 R(t v)^T L by fixed point, so that
    integrating the orientation by exp(t v) carries the world angular momentum
    along exactly; the implied impulse b - 2 Iw w equals the explicit
    gyroscopic impulse -t (w x Iw w) up to O(t^2). The map contracts at rate
    ~ t |w| / 2.
    """
    ell = iw @ w
    vh = w
    for _ in range(50):
        rot = quat_to_matrix(quat_from_rotvec(t * vh))
        nxt = 0.5 * (w + rot @ np.linalg.solve(iw, rot.T @ ell))
        if float(np.max(np.abs(nxt - vh))) <= 1e-15 * (1.0 + float(np.max(np.abs(nxt)))):
            return nxt
        vh = nxt
    return vh


def integrate_state(sub: Subsystem, v_hat: np.ndarray, t: float) -> None:
    """Advance poses by t * v_hat and store v_{k+1} = 2 v_hat - v_k."""
    v_hat = np.asarray(v_hat, dtype=float)
    if v_hat.shape != (sub.ndof,):
        raise ValueError(f"v_hat has shape {v_hat.shape}, expected ({sub.ndof},)")
    if sub.block is not None:
        blk = sub.block
        vh = v_hat.reshape(-1, 3)
        blk.positions += t * vh
        blk.velocities = 2.0 * vh - blk.velocities
        return
    nb = len(sub.bodies)
    vh = v_hat.reshape(nb, 6)
    dq = quat_from_rotvec(t * vh[:, 3:6])
    for i, body in enumerate(sub.bodies):
        body.position = body.position + t * vh[i, :3]
        body.orientation = quat_normalize(quat_multiply(dq[i], body.orientation))
        body.lin_vel = 2.0 * vh[i, :3] - body.lin_vel
        body.ang_vel = 2.0 * vh[i, 3:6] - body.ang_vel


def advance_kinematic(body: RigidBody, time: float, dt: float) -> None:
    """Move a prescribed-motion body by its step velocity (pose update only)."""
    vh = body.step_velocity(time, dt)
    body.position = body.position + dt * vh[:3]
    body.orientation = quat_normalize(
        quat_multiply(quat_from_rotvec(dt * vh[3:6]), body.orientation)
    )
    body.lin_vel = vh[:3].copy()
    body.ang_vel = vh[3:6].copy()


def fold_soft_constraints(
    a: np.ndarray, b: np.ndarray, intra_soft: Sequence
) -> tuple[np.ndarray, np.ndarray]:
    """Absorb intra-subsystem soft rows into the dynamics blocks.

    A' = A + sum k alpha J^T J, b' = b - sum k e_eff J^T, where e_eff folds the
    kinematic velocity bias into the positional error. Folded constraints must
    not also stay in the solver's active set.
    """
    a = np.array(a, dtype=float, copy=True)
    b = np.array(b, dtype=float, copy=True)
    for con in intra_soft:
        if getattr(con, "kind", None) != "soft":
            raise ValueError("fold_soft_constraints accepts soft constraints only")
        if len(con.participants) != 1:
            raise ValueError("cannot fold a coupling constraint")
        j = np.atleast_2d(np.asarray(con.jacobians[0], dtype=float))
        e_eff = con.err + con.alpha * con.bias if con.bias is not None else con.err
        k = np.broadcast_to(np.asarray(con.stiffness, dtype=float), (j.shape[0],))
        al = np.broadcast_to(np.asarray(con.alpha, dtype=float), (j.shape[0],))
        a += j.T @ ((k * al)[:, None] * j)
        b -= j.T @ (k * np.atleast_1d(e_eff))
    return a, b


# mass properties for the primitive shapes the scenarios use

def sphere_inertia(mass: float, radius: float) -> np.ndarray:
    return np.eye(3) * (0.4 * mass * radius * radius)


def box_inertia(mass: float, half_extents: np.ndarray) -> np.ndarray:
    hx, hy, hz = (2.0 * np.asarray(half_extents, dtype=float)) ** 2
    return np.diag(mass / 12.0 * np.array([hy + hz, hx + hz, hx + hy]))


def capsule_inertia(mass: float, radius: float, length: float) -> np.ndarray:
    """Solid capsule with symmetry axis z; ``length`` is the cylinder part."""
    r2 = radius * radius
    l2 = length * length
    m_cyl = mass * length / (length + 4.0 * radius / 3.0)
    m_cap = mass - m_cyl  # both hemispheres together
    ixx = m_cyl * (l2 / 12.0 + r2 / 4.0)
    izz = m_cyl * r2 / 2.0
    cap_axis = 0.4 * m_cap * r2
    cap_perp = m_cap * (0.4 * r2 + l2 / 4.0 + 3.0 * length * radius / 8.0)
    return np.diag([ixx + cap_perp, ixx + cap_perp, izz + cap_axis])
