"""Local solves, cone projection, and the per-step error report."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splitbody.constraints import (
    ConstraintSpec,
    constraint_error_report,
    fischer_burmeister,
    local_solve_contact,
    local_solve_hard_equality,
    local_solve_hard_inequality,
    local_solve_soft,
    make_contact_error,
    project_friction_cone,
    tangent_basis,
)
from oracles import cone_project_grid, hard_inequality_oracle, soft_linear_oracle

finite = st.floats(-10.0, 10.0)
pos = st.floats(0.05, 20.0)


# --- pinned single-row examples -------------------------------------------

def test_inequality_two_participants():
    lam, zs = local_solve_hard_inequality([0.0, 0.0], [1.0, 1.0], -2.0)
    assert lam == pytest.approx(1.0)
    assert zs == pytest.approx([1.0, 1.0])


def test_inequality_single_participant():
    lam, zs = local_solve_hard_inequality([-4.0], [2.0], 0.0)
    assert lam == pytest.approx(4.0)
    assert zs == pytest.approx([0.0])


def test_inequality_inactive_branch():
    lam, zs = local_solve_hard_inequality([3.0], [1.0], 0.5)
    assert lam == 0.0
    assert zs == pytest.approx([3.0])


def test_equality_examples():
    lam, zs = local_solve_hard_equality([3.0, -1.0], [1.0, 1.0], 0.0)
    assert lam == pytest.approx(-1.0)
    assert zs == pytest.approx([2.0, -2.0])
    lam, _ = local_solve_hard_equality([1.0, 1.0], [2.0, 2.0], 1.0)
    assert lam == pytest.approx(-2.0)


def test_soft_example():
    lam, _ = local_solve_soft([0.0, 0.0], [1.0, 1.0], 1.0, 1.0, 1.0)
    assert lam == pytest.approx(-1.0 / 3.0)


def test_soft_stiff_limit_is_equality():
    ys, betas, e = [0.7, -0.2], [1.3, 0.4], 0.25
    lam_eq, zs_eq = local_solve_hard_equality(ys, betas, e)
    lam_soft, zs_soft = local_solve_soft(ys, betas, e, 1e9, 1.0)
    assert lam_soft == pytest.approx(lam_eq, abs=1e-6)
    assert zs_soft == pytest.approx(zs_eq, abs=1e-6)


def test_cone_projection_example():
    out = project_friction_cone(np.array([1.0, 3.0, 0.0]), 0.5)
    assert np.allclose(out, [2.0, 1.0, 0.0])


def test_fischer_burmeister_values():
    assert fischer_burmeister(3.0, 4.0) == pytest.approx(2.0)
    assert fischer_burmeister(0.0, 5.0) == 0.0
    assert fischer_burmeister(5.0, 0.0) == 0.0
    assert fischer_burmeister(0.0, 0.0) == 0.0


def test_contact_error_penetration():
    # 1 mm deep, erp 0.2, dt 10 ms: separation speed request 0.02 m/s
    assert make_contact_error(-0.001, 0.2, 0.01) == pytest.approx(-0.02)
    # cap on the de-penetration rate
    assert make_contact_error(-0.01, 0.2, 0.01, v_max_depen=0.01) == pytest.approx(-0.01)
    # separated contacts get no stabilization
    assert make_contact_error(0.004, 0.2, 0.01) == 0.0
    # slop shifts the activation depth
    assert make_contact_error(-0.001, 0.2, 0.01, slop=0.001) == 0.0


def test_contact_error_impact_term():
    # half the approach speed is admitted so the post-step velocity is inelastic
    e = make_contact_error(-0.001, 0.0, 0.01, approach_speed=-0.4)
    assert e == pytest.approx(0.2)
    assert make_contact_error(-0.001, 0.0, 0.01, approach_speed=0.3) == 0.0


def test_contact_error_validation():
    with pytest.raises(ValueError):
        make_contact_error(-0.001, 0.2, 0.0)
    with pytest.raises(ValueError):
        make_contact_error(-0.001, 1.5, 0.01)


# --- oracle comparisons -----------------------------------------------------

@given(
    st.lists(finite, min_size=1, max_size=4),
    st.data(),
    finite,
)
@settings(max_examples=300, deadline=None)
def test_inequality_matches_oracle(ys, data, e):
    betas = [data.draw(pos) for _ in ys]
    lam, zs = local_solve_hard_inequality(ys, betas, e)
    assert lam == pytest.approx(hard_inequality_oracle(betas, ys, e), abs=1e-10)
    # dual identity: beta_i z_i - lam = y_i
    for y, b, z in zip(ys, betas, zs):
        assert b * z - lam == pytest.approx(y, abs=1e-12)


@given(
    st.lists(finite, min_size=1, max_size=4),
    st.data(),
    finite,
    st.floats(0.0, 1e4),
    st.floats(0.1, 10.0),
)
@settings(max_examples=300, deadline=None)
def test_soft_matches_oracle(ys, data, e, k, alpha):
    betas = [data.draw(pos) for _ in ys]
    lam, zs = local_solve_soft(ys, betas, e, k, alpha)
    assert lam == pytest.approx(soft_linear_oracle(betas, ys, e, k, alpha), abs=1e-8)
    s = sum(z for z in zs)
    assert lam == pytest.approx(-k * (e + alpha * s), rel=1e-9, abs=1e-9)


def test_inequality_complementarity_bulk():
    """KKT conditions hold across a large random sample."""
    rng = np.random.default_rng(0)
    n = 100_000
    ys = rng.normal(size=n) * 5.0
    betas = rng.uniform(0.05, 20.0, size=n)
    es = rng.normal(size=n) * 2.0
    s = ys / betas
    w = 1.0 / betas
    lam = np.maximum(0.0, -(s + es) / w)
    sigma = (ys + lam) / betas + es  # sum(z) + e with one participant
    assert np.all(lam >= 0.0)
    assert np.all(sigma >= -1e-9)
    assert np.max(np.abs(lam * sigma)) < 1e-9
    # spot check the scalar routine against the vectorized reference
    for i in rng.integers(0, n, size=50):
        got, _ = local_solve_hard_inequality([ys[i]], [betas[i]], es[i])
        assert got == pytest.approx(lam[i], abs=1e-12)


# --- cone projection properties ---------------------------------------------

cone_pts = st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))


@given(cone_pts, st.floats(0.05, 2.0))
@settings(max_examples=200, deadline=None)
def test_cone_membership_and_idempotence(c, mu):
    c = np.asarray(c)
    p = project_friction_cone(c, mu)
    assert np.linalg.norm(p[1:]) <= mu * p[0] + 1e-9
    assert np.allclose(project_friction_cone(p, mu), p, atol=1e-9)


@given(cone_pts, cone_pts, st.floats(0.05, 2.0))
@settings(max_examples=200, deadline=None)
def test_cone_projection_is_nonexpansive(c1, c2, mu):
    p1 = project_friction_cone(np.asarray(c1), mu)
    p2 = project_friction_cone(np.asarray(c2), mu)
    assert np.linalg.norm(p1 - p2) <= np.linalg.norm(np.asarray(c1) - np.asarray(c2)) + 1e-9


def test_cone_projection_against_grid_search():
    rng = np.random.default_rng(42)
    for _ in range(12):
        c = rng.normal(size=3) * 3.0
        mu = rng.uniform(0.1, 1.5)
        got = project_friction_cone(c, mu)
        ref, _ = cone_project_grid(c, mu)
        assert np.linalg.norm(got - ref) < 1e-4
        # never farther from c than the grid's feasible incumbent
        assert np.linalg.norm(got - c) <= np.linalg.norm(ref - c) + 1e-12


def test_cone_zero_friction():
    out = project_friction_cone(np.array([-2.0, 3.0, 1.0]), 0.0)
    assert np.allclose(out, [0.0, 0.0, 0.0])
    out = project_friction_cone(np.array([2.0, 3.0, 1.0]), 0.0)
    assert np.allclose(out, [2.0, 0.0, 0.0])


def test_cone_batched():
    cs = np.array([[1.0, 3.0, 0.0], [5.0, 1.0, 0.0], [-4.0, 0.1, 0.0]])
    out = project_friction_cone(cs, 0.5)
    assert out.shape == (3, 3)
    assert np.allclose(out[0], [2.0, 1.0, 0.0])
    assert np.allclose(out[1], [5.0, 1.0, 0.0])  # interior point unchanged
    assert np.allclose(out[2], 0.0)  # polar cone collapses to the apex


def test_contact_local_solve_modes():
    # separating candidate: impulse-free
    lam, _ = local_solve_contact([np.array([1.0, 0.0, 0.0])], [1.0], np.zeros(3), 0.5)
    assert np.allclose(lam, 0.0)
    # head-on: sticks at the candidate
    lam, zs = local_solve_contact([np.array([-2.0, 0.1, 0.0])], [1.0], np.zeros(3), 1.0)
    assert lam[0] > 0.0
    assert np.linalg.norm(lam[1:]) <= 1.0 * lam[0] + 1e-12
    assert np.allclose(zs[0], np.array([-2.0, 0.1, 0.0]) + lam)


# --- scale behavior ----------------------------------------------------------

@given(st.floats(0.1, 50.0), finite, finite, st.floats(0.05, 5.0))
@settings(max_examples=100, deadline=None)
def test_local_solves_positively_homogeneous(gamma, y, e, beta):
    lam1, _ = local_solve_hard_inequality([y], [beta], e)
    lam2, _ = local_solve_hard_inequality([gamma * y], [beta], gamma * e)
    assert lam2 == pytest.approx(gamma * lam1, rel=1e-9, abs=1e-9)
    lam1, _ = local_solve_hard_equality([y], [beta], e)
    lam2, _ = local_solve_hard_equality([gamma * y], [beta], gamma * e)
    assert lam2 == pytest.approx(gamma * lam1, rel=1e-9, abs=1e-9)


def test_beta_validation():
    with pytest.raises(ValueError):
        local_solve_hard_equality([1.0], [0.0], 0.0)
    with pytest.raises(ValueError):
        local_solve_soft([1.0], [1.0], 0.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        local_solve_contact([np.zeros(3)], [1.0], np.zeros(3), -0.1)


# --- tangent frames -----------------------------------------------------------

@given(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 1e-2))
@settings(max_examples=200, deadline=None)
def test_tangent_basis_orthonormal(n):
    n = np.asarray(n) / np.linalg.norm(n)
    t1, t2 = tangent_basis(n)
    for v in (t1, t2):
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
        assert abs(v @ n) < 1e-12
    assert abs(t1 @ t2) < 1e-12
    # frame follows the normal deterministically
    t1b, t2b = tangent_basis(n)
    assert np.all(t1 == t1b) and np.all(t2 == t2b)


def test_tangent_basis_batched():
    ns = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    t1, t2 = tangent_basis(ns)
    assert t1.shape == (2, 3)
    s1, s2 = tangent_basis(ns[0])
    assert np.allclose(t1[0], s1) and np.allclose(t2[0], s2)


# --- spec container and report ------------------------------------------------

def test_constraint_spec_validation():
    j = np.eye(3)
    with pytest.raises(ValueError, match="kind"):
        ConstraintSpec("bogus", (0,), (j,), np.zeros(3))
    with pytest.raises(ValueError, match="participant"):
        ConstraintSpec("contact", (), (), np.zeros(3))
    with pytest.raises(ValueError, match="Jacobian"):
        ConstraintSpec("contact", (0, 1), (j,), np.zeros(3))
    with pytest.raises(ValueError, match="distinct"):
        ConstraintSpec("contact", (0, 0), (j, j), np.zeros(3))
    with pytest.raises(ValueError, match="3 rows"):
        ConstraintSpec("contact", (0,), (np.eye(2),), np.zeros(2))
    with pytest.raises(ValueError, match="row count"):
        ConstraintSpec("hard_equality", (0,), (j,), np.zeros(2))
    with pytest.raises(ValueError, match="nonnegative"):
        ConstraintSpec("contact", (0,), (j,), np.zeros(3), mu=-0.5)
    with pytest.raises(ValueError, match="alpha"):
        ConstraintSpec("soft", (0,), (j,), np.zeros(3), stiffness=1.0, alpha=0.0)


def test_solver_error_folds_bias():
    j = np.ones((1, 6))
    hard = ConstraintSpec("hard_equality", (0,), (j,), np.array([0.5]), bias=np.array([0.25]))
    assert hard.solver_error() == pytest.approx([0.75])
    soft = ConstraintSpec("soft", (0,), (j,), np.array([0.5]), bias=np.array([0.25]), stiffness=1.0, alpha=2.0)
    assert soft.solver_error() == pytest.approx([1.0])
    plain = ConstraintSpec("hard_equality", (0,), (j,), np.array([0.5]))
    assert plain.solver_error() is plain.err


def test_report_contact_example():
    """Unit impulse against unit residual velocity scores 2 - sqrt(2)."""
    con = ConstraintSpec("contact", (0,), (np.hstack([np.eye(3), np.zeros((3, 3))]),), np.zeros(3), mu=0.5)
    v_hats = [np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])]
    rep = constraint_error_report([con], v_hats, [np.array([1.0, 0.0, 0.0])])
    assert rep["contact"] == pytest.approx(2.0 - np.sqrt(2.0))
    assert rep["total"] == pytest.approx(2.0 - np.sqrt(2.0))


def test_report_zero_at_satisfied_state():
    j = np.hstack([np.eye(3), np.zeros((3, 3))])
    con = ConstraintSpec("contact", (0,), (j,), np.zeros(3), mu=0.5)
    rep = constraint_error_report([con], [np.zeros(6)], [np.array([0.3924e-3, 0.0, 0.0])])
    assert rep["contact"] == 0.0
    eq = ConstraintSpec("hard_equality", (0,), (np.ones((1, 6)),), np.array([-0.6]))
    rep = constraint_error_report([eq], [np.full(6, 0.1)], [np.zeros(1)])
    assert rep["hard_equality"] == pytest.approx(0.0, abs=1e-15)


def test_report_soft_residual():
    j = np.ones((1, 3))
    con = ConstraintSpec("soft", (0,), (j,), np.array([0.2]), stiffness=10.0, alpha=1.0)
    v = [np.array([0.1, 0.0, 0.0])]
    lam = np.array([-3.0])  # relation wants -10*(0.2 + 0.1) = -3
    rep = constraint_error_report([con], v, [lam])
    assert rep["soft"] == pytest.approx(0.0, abs=1e-12)
    rep = constraint_error_report([con], v, [np.array([-2.0])])
    assert rep["soft"] == pytest.approx(1.0)


def test_report_euclidean_accumulation():
    j = np.ones((1, 3))
    eqs = [ConstraintSpec("hard_equality", (0,), (j,), np.array([1.0])) for _ in range(4)]
    rep = constraint_error_report(eqs, [np.zeros(3)], [np.zeros(1)] * 4)
    assert rep["hard_equality"] == pytest.approx(2.0)  # sqrt(4 * 1^2)
    assert rep["total"] == pytest.approx(2.0)


def test_report_sliding_alignment():
    """A sliding contact scores zero exactly when friction opposes the slip."""
    j = np.hstack([np.eye(3), np.zeros((3, 3))])
    con = ConstraintSpec("contact", (0,), (j,), np.zeros(3), mu=0.5)
    slip = np.array([0.0, 0.2, 0.0])  # sliding along +y at 0.2
    lam_n = 2.0
    lam_aligned = np.array([lam_n, -0.5 * lam_n, 0.0])
    rep = constraint_error_report([con], [np.concatenate([slip, np.zeros(3)])], [lam_aligned])
    assert rep["contact"] == pytest.approx(0.0, abs=1e-12)
    lam_wrong = np.array([lam_n, +0.5 * lam_n, 0.0])
    rep = constraint_error_report([con], [np.concatenate([slip, np.zeros(3)])], [lam_wrong])
    assert rep["contact"] > 0.1
