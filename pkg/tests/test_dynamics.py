import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import least_squares

from magswim.dynamics import (
    EBState,
    FrameState,
    Parameters,
    QUATERNION_SYSTEM,
    field_lab,
    frames_from_quaternion,
    pack_args,
    quat_F,
    quat_to_rotation,
    rhs_eB,
    rhs_frames,
    rhs_quaternion,
    rhs_quaternion_corrected,
    rot3,
    rotation_to_quat,
)
from magswim.experiments import formulation_agreement, formulation_observables

IDENTITY = FrameState(np.eye(3)[0], np.eye(3)[1], np.eye(3)[2])
quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 0.1)


def test_parameters_validation():
    with pytest.raises(ValueError):
        Parameters(0.0, 0.2)
    with pytest.raises(ValueError):
        Parameters(1.0, 3.5)
    assert Parameters(1.0, 0.2).varsigma == 1
    assert Parameters(1.0, 2.0).varsigma == -1
    assert Parameters(1.0, math.pi / 2).varsigma == 1
    assert not Parameters(1.0, 0.0).frame_defined
    assert Parameters(1.0, 0.2).with_(psi=0.3) == Parameters(1.0, 0.3)


def test_field_lab_examples():
    np.testing.assert_allclose(field_lab(0.0, IDENTITY, Parameters(2.0, math.pi / 2)), [1, 0, 0], atol=1e-16)
    np.testing.assert_allclose(field_lab(math.pi / 4, IDENTITY, Parameters(2.0, math.pi / 2)), [0, 1, 0],
                               atol=1e-15)


@given(st.floats(0, 100))
def test_field_lab_cone(t):
    E = rot3(0.4) @ quat_to_rotation([0.2, -0.1, 0.4, 0.9])
    state = FrameState.from_matrix(E)
    assert field_lab(t, state, Parameters(1.3, 0.3)) @ state.e3 == pytest.approx(math.cos(0.3), abs=1e-14)


def test_rhs_frames_zero_when_field_in_kernel(helix):
    # choose a frame whose field at t = 0 is m: psi = 0, e3 = m
    E = quat_to_rotation(rotation_to_quat(_frame_with_e3(helix.m)))
    d = rhs_frames(0.0, FrameState.from_matrix(E), Parameters(1.0, 0.0), helix)
    assert np.abs(d.as_array()).max() < 1e-15


def _frame_with_e3(v):
    v = v / np.linalg.norm(v)
    u = np.cross(v, [1.0, 0.0, 0.0])
    u /= np.linalg.norm(u)
    return np.column_stack([u, np.cross(v, u), v])


def test_rhs_frames_isotropic_hand_oracle(iso):
    d = rhs_frames(0.0, IDENTITY, Parameters(1.0, math.pi / 2), iso)
    np.testing.assert_allclose(d.e3, [-1, 0, 0], atol=1e-15)


@settings(max_examples=30)
@given(quats, st.floats(0, 10))
def test_rhs_frames_skew(helix, q, t):
    E = quat_to_rotation(q)
    state = FrameState.from_matrix(E)
    d = rhs_frames(t, state, Parameters(0.7, 0.9), helix).matrix()
    # d/dt (E^T E) = dE^T E + E^T dE vanishes
    assert np.abs(d.T @ E + E.T @ d).max() < 1e-14
    h = 1e-6
    Ep = E + h * d
    Em = E - h * d
    fd = (Ep.T @ Ep - Em.T @ Em) / (2 * h)
    assert np.abs(fd).max() < 1e-8


def test_rhs_eB_fixed_point(helix):
    s = EBState(helix.m.copy(), helix.m.copy())
    d = rhs_eB(s, Parameters(3.0, 0.0), helix)
    assert np.abs(d.as_array()).max() < 1e-15


def test_rhs_eB_inner_layer(helix, rng):
    B = rng.standard_normal(3)
    B /= np.linalg.norm(B)
    e3 = rng.standard_normal(3)
    e3 /= np.linalg.norm(e3)
    d = rhs_eB(EBState(e3, B), Parameters(1e-300, 0.3), helix)
    np.testing.assert_allclose(d.B, -np.cross(helix.p @ B, B), atol=1e-15)


@settings(max_examples=50)
@given(quats, st.floats(0.01, 100), st.floats(0, math.pi))
def test_rhs_eB_conserves_cone(helix, q, a, psi):
    params = Parameters(a, psi)
    Q = quat_to_rotation(q)
    s = EBState(Q[:, 2], Q @ params.field_direction())
    d = rhs_eB(s, params, helix)
    assert abs(d.e3 @ s.B + s.e3 @ d.B) <= 1e-14 * max(1.0, a)


def test_quat_to_rotation_examples():
    np.testing.assert_array_equal(quat_to_rotation([0, 0, 0, 1]), np.eye(3))
    q = np.array([0.1, -0.5, 0.3, 0.8])
    np.testing.assert_allclose(quat_to_rotation(q), quat_to_rotation(-q), atol=0)
    th = 1.1
    np.testing.assert_allclose(quat_to_rotation([0, 0, math.sin(th / 2), math.cos(th / 2)]), rot3(th),
                               atol=1e-15)
    with pytest.raises(ValueError):
        quat_to_rotation([0, 0, 0, 0])


@given(quats)
def test_quat_rotation_orthogonal(q):
    q = np.asarray(q) / np.linalg.norm(q)
    Q = quat_to_rotation(q)
    assert np.abs(Q.T @ Q - np.eye(3)).max() <= 1e-14
    assert np.linalg.det(Q) == pytest.approx(1.0, abs=1e-14)
    assert np.abs(quat_F(q) @ q).max() < 1e-15
    q2 = rotation_to_quat(Q)
    assert min(np.abs(q2 - q).max(), np.abs(q2 + q).max()) < 1e-12


@given(quats)
def test_quat_scale_invariance(q):
    np.testing.assert_allclose(quat_to_rotation(q), quat_to_rotation(3.7 * np.asarray(q)), atol=1e-14)


def test_correction_vanishes_on_unit_quaternions(helix):
    q = np.array([0.5, 0.5, -0.5, 0.5])
    p = Parameters(0.4, 0.8)
    np.testing.assert_array_equal(rhs_quaternion_corrected(q, p, helix), rhs_quaternion(q, p, helix))


def test_correction_shrinks_norm(helix):
    q = np.array([0.2, 0.3, -0.1, 0.9])
    q = 1.1 * q / np.linalg.norm(q)
    n2 = q @ q
    dq = rhs_quaternion_corrected(q, Parameters(0.4, 0.8), helix)
    assert 2 * q @ dq == pytest.approx(-n2 * (n2 - 1.0), rel=1e-12)


@settings(max_examples=30)
@given(quats, st.floats(0.01, 50), st.floats(0, math.pi))
def test_kernel_matches_reference(helix, q, a, psi):
    params = Parameters(a, psi)
    np.testing.assert_allclose(QUATERNION_SYSTEM(0.0, np.asarray(q), pack_args(params, helix)),
                               rhs_quaternion_corrected(q, params, helix), atol=1e-13 * max(1, a))


def relative_equilibrium(model, params, guess=(0.1, 0.1, 0.1, 0.9)):
    """Root of the uncorrected quaternion field on the unit sphere."""
    fun = lambda q: np.append(rhs_quaternion(q, params, model), q @ q - 1.0)
    sol = least_squares(fun, guess, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return sol.x / np.linalg.norm(sol.x)


def test_relative_equilibrium_root_find(helix):
    params = Parameters(0.01, math.pi / 2)
    q = relative_equilibrium(helix, params)
    u = params.a * quat_to_rotation(q)[:, 2] - helix.p @ quat_to_rotation(q) @ params.field_direction()
    dq = rhs_quaternion_corrected(q, params, helix)
    assert np.linalg.norm(dq - 0.5 * quat_F(q).T @ u) < 1e-15
    assert np.linalg.norm(dq) < 1e-12


def test_frames_from_quaternion():
    p = Parameters(2.0, 0.4)
    fr = frames_from_quaternion([0, 0, 0, 1], 0.5, p)
    np.testing.assert_allclose(fr.matrix(), rot3(1.0).T, atol=1e-15)


@settings(max_examples=5, deadline=None)
@given(st.floats(0.05, 5), st.floats(0.05, math.pi - 0.05), quats)
def test_formulation_equivalence(helix, a, psi, q0):
    assert formulation_agreement(helix, Parameters(a, psi), q0) < 1e-6


def test_frames_unavailable_on_axis(helix):
    obs = formulation_observables(helix, Parameters(1.0, 0.0), [0, 0, 0, 1], np.linspace(0, 1, 5))
    assert set(obs) == {"quaternion", "eB"}
