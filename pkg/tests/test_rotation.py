"""Quaternion helper checks against scipy.spatial.transform as the reference."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from splitbody.rotation import (
    quat_from_rotvec,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    quat_to_rotvec,
)


def _wxyz_to_scipy(q):
    return np.concatenate([q[..., 1:], q[..., :1]], axis=-1)


rotvecs = st.builds(
    lambda axis, angle: np.asarray(axis) * angle,
    st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
        lambda a: np.linalg.norm(a) > 1e-3
    ).map(lambda a: np.asarray(a) / np.linalg.norm(a)),
    st.floats(1e-6, np.pi - 1e-6),
)


@given(rotvecs)
@settings(max_examples=200, deadline=None)
def test_from_rotvec_matches_scipy(phi):
    q = quat_from_rotvec(phi)
    q_ref = Rotation.from_rotvec(phi).as_quat()  # xyzw
    assert np.allclose(_wxyz_to_scipy(q), q_ref, atol=1e-12) or np.allclose(
        _wxyz_to_scipy(q), -q_ref, atol=1e-12
    )


@given(rotvecs)
@settings(max_examples=200, deadline=None)
def test_matrix_matches_scipy(phi):
    q = quat_from_rotvec(phi)
    m = quat_to_matrix(q)
    m_ref = Rotation.from_rotvec(phi).as_matrix()
    assert np.allclose(m, m_ref, atol=1e-12)


@given(rotvecs)
@settings(max_examples=200, deadline=None)
def test_exp_log_round_trip(phi):
    back = quat_to_rotvec(quat_from_rotvec(phi))
    assert np.allclose(back, phi, atol=1e-9)


@given(rotvecs, rotvecs)
@settings(max_examples=200, deadline=None)
def test_multiply_is_homomorphism(pa, pb):
    """R(p*q) = R(p) R(q)."""
    qa, qb = quat_from_rotvec(pa), quat_from_rotvec(pb)
    left = quat_to_matrix(quat_multiply(qa, qb))
    right = quat_to_matrix(qa) @ quat_to_matrix(qb)
    assert np.allclose(left, right, atol=1e-12)


def test_unit_norm():
    rng = np.random.default_rng(7)
    phi = rng.normal(size=(50, 3))
    q = quat_from_rotvec(phi)
    assert np.allclose(np.linalg.norm(q, axis=-1), 1.0, atol=1e-14)


def test_half_turn_about_z():
    # one step at 50 rev/s, dt 0.01: the orientation advances by pi about z
    q = quat_from_rotvec(np.array([0.0, 0.0, np.pi]))
    assert np.allclose(q, [0.0, 0.0, 0.0, 1.0], atol=1e-15)
    m = quat_to_matrix(q)
    assert np.allclose(m @ [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], atol=1e-15)


def test_small_angle_branch():
    phi = np.array([1e-10, -2e-10, 5e-11])
    q = quat_from_rotvec(phi)
    assert abs(np.linalg.norm(q) - 1.0) < 1e-15
    assert np.allclose(quat_to_rotvec(q), phi, atol=1e-18)
    assert np.allclose(quat_to_matrix(q), np.eye(3), atol=1e-9)


def test_zero_rotation():
    q = quat_from_rotvec(np.zeros(3))
    assert np.allclose(q, [1.0, 0.0, 0.0, 0.0])
    assert np.allclose(quat_to_rotvec(q), np.zeros(3))


def test_log_uses_canonical_hemisphere():
    q = quat_from_rotvec(np.array([0.3, -0.4, 0.1]))
    assert np.allclose(quat_to_rotvec(q), quat_to_rotvec(-q))


def test_normalize():
    q = np.array([2.0, 0.0, 0.0, 0.0])
    assert np.allclose(quat_normalize(q), [1.0, 0.0, 0.0, 0.0])
    batch = np.random.default_rng(3).normal(size=(10, 4))
    out = quat_normalize(batch)
    assert np.allclose(np.linalg.norm(out, axis=-1), 1.0)


def test_batched_shapes():
    phi = np.random.default_rng(11).normal(size=(6, 3)) * 0.5
    q = quat_from_rotvec(phi)
    assert q.shape == (6, 4)
    assert quat_to_matrix(q).shape == (6, 3, 3)
    assert quat_to_rotvec(q).shape == (6, 3)
    single = quat_from_rotvec(phi[0])
    assert np.allclose(q[0], single)


def test_matrix_orthonormal():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = quat_to_matrix(quat_normalize(rng.normal(size=4)))
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-13)
        assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-13)
