"""Dynamics assembly, integration, and conservation checks."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splitbody.bodies import (
    PointMassBlock,
    RigidBody,
    Subsystem,
    WorldState,
    advance_kinematic,
    assemble_subsystem_dynamics,
    box_inertia,
    capsule_inertia,
    fold_soft_constraints,
    integrate_state,
    sphere_inertia,
)
from splitbody.constraints import ConstraintSpec
from splitbody.rotation import quat_from_rotvec, quat_to_matrix


def _ball(name="b", mass=1.0, r=0.1, **kw):
    return RigidBody(name=name, mass=mass, body_inertia=sphere_inertia(mass, r), position=np.zeros(3), **kw)


def test_free_fall_half_step_velocity():
    """One unconstrained step under gravity gives v_hat = g*t/2."""
    world = WorldState(dt=0.01)
    sub = world.add_subsystem(Subsystem(index=0, bodies=[_ball()]))
    a, b = assemble_subsystem_dynamics(sub, world)
    v_hat = np.linalg.solve(a, b)
    assert v_hat[2] == pytest.approx(-0.04905, abs=1e-12)
    assert np.allclose(v_hat[[0, 1, 3, 4, 5]], 0.0)
    integrate_state(sub, v_hat, world.dt)
    body = sub.bodies[0]
    assert body.lin_vel[2] == pytest.approx(-0.0981, abs=1e-12)  # 2 v_hat - v_k
    assert body.position[2] == pytest.approx(-0.0004905, abs=1e-15)


def test_assembly_blocks():
    world = WorldState(dt=0.01)
    body = _ball(mass=2.0, r=0.2)
    body.lin_vel = np.array([1.0, -2.0, 3.0])
    body.ang_vel = np.array([0.5, 0.0, -0.5])
    sub = world.add_subsystem(Subsystem(index=0, bodies=[body]))
    a, b = assemble_subsystem_dynamics(sub, world)
    assert np.allclose(a[:3, :3], 4.0 * np.eye(3))
    iw = body.world_inertia()
    assert np.allclose(a[3:, 3:], 2.0 * iw)
    assert np.allclose(a[:3, 3:], 0.0)
    # momentum plus impressed gravity impulse
    assert np.allclose(b[:3], 2.0 * 2.0 * body.lin_vel + 0.01 * 2.0 * world.gravity)
    assert np.allclose(b[3:], 2.0 * iw @ body.ang_vel)  # isotropic: no gyro term


def test_point_block_assembly():
    world = WorldState(dt=0.02)
    blk = PointMassBlock(np.zeros((2, 3)), np.array([[1.0, 0, 0], [0, 0, 2.0]]), np.array([0.5, 3.0]))
    sub = world.add_subsystem(Subsystem(index=0, block=blk))
    a, b = assemble_subsystem_dynamics(sub, world)
    assert a.shape == (6, 6)
    assert np.allclose(np.diag(a), [1.0, 1.0, 1.0, 6.0, 6.0, 6.0])
    assert b[0] == pytest.approx(1.0)
    assert b[5] == pytest.approx(2 * 3.0 * 2.0 + 0.02 * 3.0 * -9.81)


def test_external_impulse_enters_rhs():
    world = WorldState(dt=0.01, gravity=np.zeros(3))
    sub = world.add_subsystem(Subsystem(index=0, bodies=[_ball()]))
    imp = [np.array([0.1, 0.0, 0.0, 0.0, 0.0, 0.02])]
    a, b = assemble_subsystem_dynamics(sub, world, imp)
    v_hat = np.linalg.solve(a, b)
    assert v_hat[0] == pytest.approx(0.05)  # impulse / 2m
    assert v_hat[5] == pytest.approx(0.02 / a[5, 5])  # impulse / (2 I)


def test_integrate_velocity_reflection():
    world = WorldState(dt=0.01)
    body = _ball()
    body.lin_vel = np.array([1.0, 0.0, 0.0])
    sub = world.add_subsystem(Subsystem(index=0, bodies=[body]))
    v_hat = np.zeros(6)
    integrate_state(sub, v_hat, world.dt)
    assert np.allclose(body.lin_vel, [-1.0, 0.0, 0.0])  # v_{k+1} = 2*0 - v_k
    assert np.allclose(body.position, 0.0)


def test_integrate_half_turn():
    world = WorldState(dt=0.01)
    body = _ball()
    sub = world.add_subsystem(Subsystem(index=0, bodies=[body]))
    v_hat = np.zeros(6)
    v_hat[5] = 100.0 * np.pi  # pi about z over one step
    integrate_state(sub, v_hat, world.dt)
    m = quat_to_matrix(body.orientation)
    assert np.allclose(m @ [1, 0, 0], [-1, 0, 0], atol=1e-12)


def test_isotropic_gyro_impulse_is_exactly_zero():
    """Spheres spin without any gyroscopic forcing, bit for bit."""
    world = WorldState(dt=0.01, gravity=np.zeros(3))
    body = _ball(mass=0.004, r=0.01)
    body.ang_vel = np.array([11.0, -7.0, 3.0])
    body.orientation = quat_from_rotvec(np.array([0.3, 0.2, -0.5]))
    sub = world.add_subsystem(Subsystem(index=0, bodies=[body]))
    a, b = assemble_subsystem_dynamics(sub, world)
    assert np.all(b[3:] == a[3:, 3:] @ body.ang_vel)
    v_hat = np.linalg.solve(a, b)
    # angular velocity is preserved through the step
    integrate_state(sub, v_hat, world.dt)
    assert np.allclose(body.ang_vel, [11.0, -7.0, 3.0], atol=1e-12)


def _free_tumble(inertia, w0, steps, dt=0.01):
    world = WorldState(dt=dt, gravity=np.zeros(3))
    body = RigidBody(name="brick", mass=1.0, body_inertia=inertia, position=np.zeros(3))
    body.ang_vel = np.asarray(w0, dtype=float)
    sub = world.add_subsystem(Subsystem(index=0, bodies=[body]))
    ell0 = body.world_inertia() @ body.ang_vel
    for _ in range(steps):
        a, b = assemble_subsystem_dynamics(sub, world)
        integrate_state(sub, np.linalg.solve(a, b), dt)
    ell = body.world_inertia() @ body.ang_vel
    return ell0, ell, body


def test_angular_momentum_conserved_in_free_tumble():
    """Unstable-axis tumble: world angular momentum drifts < 1e-6 over 1000 steps."""
    inertia = box_inertia(1.0, np.array([0.05, 0.02, 0.01]))
    ell0, ell, _ = _free_tumble(inertia, [0.1, 8.0, 0.1], 1000)
    drift = np.linalg.norm(ell - ell0) / np.linalg.norm(ell0)
    assert drift < 1e-6


def test_gyro_impulse_matches_cross_product_at_leading_order():
    """b_ang - 2 I w reproduces -t (w x I w) with an O(t^2) gap."""
    inertia = box_inertia(1.0, np.array([0.05, 0.02, 0.01]))
    w = np.array([0.3, 5.0, -1.0])
    gaps = []
    for dt in (0.01, 0.005):
        world = WorldState(dt=dt, gravity=np.zeros(3))
        body = RigidBody(name="b", mass=1.0, body_inertia=inertia, position=np.zeros(3))
        body.ang_vel = w.copy()
        sub = world.add_subsystem(Subsystem(index=0, bodies=[body]))
        _, b = assemble_subsystem_dynamics(sub, world)
        iw = body.world_inertia()
        implied = b[3:] - 2.0 * iw @ w
        explicit = -dt * np.cross(w, iw @ w)
        gaps.append(np.linalg.norm(implied - explicit))
    assert gaps[0] < 1e-3 * np.linalg.norm(w)
    # halving dt shrinks the gap roughly 4x
    assert gaps[1] < 0.35 * gaps[0]


def test_linear_momentum_exact_in_free_flight():
    world = WorldState(dt=0.01, gravity=np.zeros(3))
    body = _ball(mass=2.5)
    body.lin_vel = np.array([0.3, -0.2, 0.9])
    p0 = body.mass * body.lin_vel.copy()
    sub = world.add_subsystem(Subsystem(index=0, bodies=[body]))
    for _ in range(500):
        a, b = assemble_subsystem_dynamics(sub, world)
        integrate_state(sub, np.linalg.solve(a, b), world.dt)
    assert np.all(body.mass * body.lin_vel == p0)


@given(
    st.floats(0.01, 100.0),
    st.tuples(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.01, 1.0)),
    st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3)),
)
@settings(max_examples=60, deadline=None)
def test_assembled_matrix_is_spd(mass, half_extents, rotvec):
    world = WorldState(dt=0.01)
    body = RigidBody(
        name="b",
        mass=mass,
        body_inertia=box_inertia(mass, np.asarray(half_extents)),
        position=np.zeros(3),
        orientation=quat_from_rotvec(np.asarray(rotvec)),
    )
    sub = world.add_subsystem(Subsystem(index=0, bodies=[body]))
    a, _ = assemble_subsystem_dynamics(sub, world)
    assert np.allclose(a, a.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(a) > 0.0)


def test_kinematic_body_rejected_in_dynamic_subsystem():
    world = WorldState()
    body = _ball(kinematic=True)
    sub = world.add_subsystem(Subsystem(index=0, bodies=[body]))
    with pytest.raises(ValueError, match="kinematic"):
        assemble_subsystem_dynamics(sub, world)


def test_advance_kinematic_follows_driver():
    body = _ball(kinematic=True, driver=lambda t, dt: np.array([1.0, 0, 0, 0, 0, np.pi / 2 / dt * 0]))
    advance_kinematic(body, 0.0, 0.1)
    assert np.allclose(body.position, [0.1, 0, 0])
    assert np.allclose(body.lin_vel, [1.0, 0, 0])


def test_fold_single_dof_example():
    """A=1, b=0, one soft row J=1, e=0.1, k=10, alpha=1 folds to A'=11, b'=-1."""
    con = ConstraintSpec("soft", (0,), (np.array([[1.0]]),), np.array([0.1]), stiffness=10.0, alpha=1.0)
    a, b = fold_soft_constraints(np.array([[1.0]]), np.array([0.0]), [con])
    assert a[0, 0] == pytest.approx(11.0)
    assert b[0] == pytest.approx(-1.0)
    assert np.linalg.solve(a, b)[0] == pytest.approx(-1.0 / 11.0)


def test_fold_rejects_wrong_kinds():
    hard = ConstraintSpec("hard_equality", (0,), (np.array([[1.0]]),), np.array([0.0]))
    with pytest.raises(ValueError, match="soft"):
        fold_soft_constraints(np.eye(1), np.zeros(1), [hard])
    coupling = ConstraintSpec(
        "soft",
        (0, 1),
        (np.array([[1.0]]), np.array([[-1.0]])),
        np.array([0.0]),
        stiffness=1.0,
    )
    with pytest.raises(ValueError, match="coupling"):
        fold_soft_constraints(np.eye(1), np.zeros(1), [coupling])


def test_fold_vector_stiffness_and_bias():
    j = np.array([[1.0, 0.0], [0.0, 2.0]])
    con = ConstraintSpec(
        "soft",
        (0,),
        (j,),
        np.array([0.1, -0.2]),
        stiffness=np.array([10.0, 5.0]),
        alpha=2.0,
        bias=np.array([0.0, 0.05]),
    )
    a, b = fold_soft_constraints(np.eye(2), np.zeros(2), [con])
    assert np.allclose(a, np.eye(2) + j.T @ np.diag([20.0, 10.0]) @ j)
    e_eff = np.array([0.1, -0.2 + 2.0 * 0.05])
    assert np.allclose(b, -j.T @ (np.array([10.0, 5.0]) * e_eff))


def test_fold_matches_stiff_spring_step():
    """Folding one stiff spring equals solving the penalty force implicitly."""
    k, alpha, e0 = 50.0, 2.0, 0.01
    con = ConstraintSpec("soft", (0,), (np.array([[1.0, 0, 0, 0, 0, 0]]),), np.array([e0]), stiffness=k, alpha=alpha)
    world = WorldState(dt=0.01, gravity=np.zeros(3))
    sub = world.add_subsystem(Subsystem(index=0, bodies=[_ball()]))
    a, b = assemble_subsystem_dynamics(sub, world)
    af, bf = fold_soft_constraints(a, b, [con])
    v = np.linalg.solve(af, bf)
    # velocity satisfies 2m v = -k(e0 + alpha v) termwise
    lam = -k * (e0 + alpha * v[0])
    assert 2.0 * 1.0 * v[0] == pytest.approx(lam, rel=1e-12)


def test_subsystem_velocity_and_ndof():
    body = _ball()
    body.lin_vel = np.array([1.0, 2.0, 3.0])
    body.ang_vel = np.array([4.0, 5.0, 6.0])
    sub = Subsystem(index=0, bodies=[body, _ball(name="c")])
    assert sub.ndof == 12
    assert np.allclose(sub.velocity()[:6], [1, 2, 3, 4, 5, 6])
    blk = Subsystem(index=1, block=PointMassBlock(np.zeros((4, 3)), np.ones((4, 3)), np.ones(4)))
    assert blk.ndof == 12
    with pytest.raises(ValueError):
        Subsystem(index=2, bodies=[body], block=PointMassBlock(np.zeros((1, 3)), np.zeros((1, 3)), np.ones(1)))


def test_inertia_helpers():
    assert np.allclose(sphere_inertia(2.0, 0.5), np.eye(3) * 0.2)
    bi = box_inertia(12.0, np.array([0.5, 1.0, 1.5]))
    assert bi[0, 0] == pytest.approx(4.0 + 9.0)
    # capsule degenerates to a sphere as the cylinder length vanishes
    ci = capsule_inertia(1.0, 0.3, 1e-12)
    assert np.allclose(np.diag(ci), 0.4 * 0.3**2, rtol=1e-6)
    # and to a solid cylinder as the caps vanish
    ci2 = capsule_inertia(1.0, 1e-9, 2.0)
    assert ci2[0, 0] == pytest.approx(4.0 / 12.0, rel=1e-6)


def test_world_state_validation():
    with pytest.raises(ValueError):
        WorldState(dt=0.0)
    world = WorldState(dt=0.5)
    world.step_index = 4
    assert world.time == pytest.approx(2.0)
    with pytest.raises(ValueError, match="positive"):
        sub = Subsystem(index=0, bodies=[_ball(mass=-1.0)])
        assemble_subsystem_dynamics(sub, WorldState())
    with pytest.raises(ValueError, match="positive definite"):
        bad = RigidBody(name="x", mass=1.0, body_inertia=-np.eye(3), position=np.zeros(3))
        assemble_subsystem_dynamics(Subsystem(index=0, bodies=[bad]), WorldState())
