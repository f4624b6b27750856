"""Governing equations in frame, (e3, B) and quaternion form.

Vectors are expressed in body-frame components throughout. The quaternion
``q = (q1, q2, q3, q4)`` carries its scalar part last and parametrises the
body-to-magnetic-frame rotation ``Q(q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from ._kernels import EB_SYSTEM, FRAMES_SYSTEM, QUATERNION_PARAM_SYSTEM, QUATERNION_SYSTEM

__all__ = [
    "Parameters",
    "FrameState",
    "EBState",
    "pack_args",
    "field_lab",
    "rhs_frames",
    "rhs_eB",
    "quat_to_rotation",
    "rotation_to_quat",
    "quat_F",
    "rhs_quaternion",
    "rhs_quaternion_corrected",
    "rot3",
    "frames_from_quaternion",
    "eb_from_quaternion",
    "random_quaternions",
    "QUATERNION_SYSTEM",
    "QUATERNION_PARAM_SYSTEM",
    "FRAMES_SYSTEM",
    "EB_SYSTEM",
]

FREE_PARAMS = {"a": 0, "psi": 1}


@dataclass(frozen=True)
class Parameters:
    """Mason number ``a`` and conical angle ``psi``."""

    a: float
    psi: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"Mason number must be positive, got {self.a}")
        if not 0.0 <= self.psi <= math.pi:
            raise ValueError(f"conical angle must lie in [0, pi], got {self.psi}")

    @property
    def varsigma(self):
        """Sign of ``cos psi`` (+1 at exactly pi/2)."""
        return 1 if math.cos(self.psi) >= 0 else -1

    @property
    def frame_defined(self):
        """Lab frame is recoverable from (e3, B) only when ``sin psi != 0``."""
        return math.sin(self.psi) > 1e-12

    def field_direction(self):
        """Field in magnetic-frame components, ``(sin psi, 0, cos psi)``."""
        return np.array([math.sin(self.psi), 0.0, math.cos(self.psi)])

    def with_(self, **kw):
        return Parameters(kw.get("a", self.a), kw.get("psi", self.psi))


@dataclass(frozen=True)
class FrameState:
    """Lab basis vectors in body components."""

    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray

    def as_array(self):
        return np.concatenate([self.e1, self.e2, self.e3])

    def matrix(self):
        """Matrix with columns e1, e2, e3."""
        return np.column_stack([self.e1, self.e2, self.e3])

    @classmethod
    def from_array(cls, y):
        y = np.asarray(y, dtype=float)
        return cls(y[0:3].copy(), y[3:6].copy(), y[6:9].copy())

    @classmethod
    def from_matrix(cls, E):
        E = np.asarray(E, dtype=float)
        return cls(E[:, 0].copy(), E[:, 1].copy(), E[:, 2].copy())


@dataclass(frozen=True)
class EBState:
    """Rotation axis ``e3`` and field ``B`` in body components."""

    e3: np.ndarray
    B: np.ndarray

    def as_array(self):
        return np.concatenate([self.e3, self.B])

    @classmethod
    def from_array(cls, y):
        y = np.asarray(y, dtype=float)
        return cls(y[0:3].copy(), y[3:6].copy())


def pack_args(params, model, free=None):
    """Argument vector consumed by the compiled kernels."""
    idx = -1 if free is None else FREE_PARAMS[free]
    return np.concatenate([[params.a, params.psi], np.asarray(model.p, dtype=float).ravel(), [idx]])


def rot3(phi):
    """Rotation by ``phi`` about the third axis."""
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def field_lab(t, state, params):
    """External field ``B(t)`` in body components from the lab frame."""
    sp, cp = math.sin(params.psi), math.cos(params.psi)
    at = params.a * t
    return sp * (math.cos(at) * state.e1 + math.sin(at) * state.e2) + cp * state.e3


def rhs_frames(t, state, params, model):
    """``d e_i/dt = -(P B) x e_i``."""
    w = model.p @ field_lab(t, state, params)
    return FrameState(-np.cross(w, state.e1), -np.cross(w, state.e2), -np.cross(w, state.e3))


def rhs_eB(state, params, model):
    """Autonomous (e3, B) system."""
    w = model.p @ state.B
    return EBState(-np.cross(w, state.e3), np.cross(params.a * state.e3 - w, state.B))


def quat_to_rotation(q):
    """Rotation matrix ``Q(q)``; invariant under scaling of ``q``.

    Raises
    ------
    ValueError
        For the zero quaternion.
    """
    q1, q2, q3, q4 = np.asarray(q, dtype=float)
    n2 = q1 * q1 + q2 * q2 + q3 * q3 + q4 * q4
    if not n2 > 0.0:
        raise ValueError("zero quaternion does not define a rotation")
    return np.array([
        [q1 * q1 - q2 * q2 - q3 * q3 + q4 * q4, 2 * (q1 * q2 - q3 * q4), 2 * (q1 * q3 + q2 * q4)],
        [2 * (q1 * q2 + q3 * q4), -q1 * q1 + q2 * q2 - q3 * q3 + q4 * q4, 2 * (q2 * q3 - q1 * q4)],
        [2 * (q1 * q3 - q2 * q4), 2 * (q2 * q3 + q1 * q4), -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4],
    ]) / n2


def rotation_to_quat(R):
    """Unit quaternion (scalar last, ``q4 >= 0``) with ``quat_to_rotation(q) == R``."""
    q = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    return q if q[3] >= 0 else -q


def quat_F(q):
    """The 3x4 matrix ``F(q)``; ``F(q) q = 0``."""
    q1, q2, q3, q4 = np.asarray(q, dtype=float)
    return np.array([
        [q4, -q3, q2, -q1],
        [q3, q4, -q1, -q2],
        [-q2, q1, q4, -q3],
    ])


def _angular_velocity(q, params, model):
    Q = quat_to_rotation(q)
    return params.a * Q[:, 2] - model.p @ (Q @ params.field_direction())


def rhs_quaternion(q, params, model):
    """Uncorrected quaternion form ``0.5 F^T(q) u(q)``."""
    return 0.5 * quat_F(q).T @ _angular_velocity(q, params, model)


def rhs_quaternion_corrected(q, params, model):
    """Norm-corrected form ``0.5 F^T(q) u(q) - 0.5 (|q|^2 - 1) q``."""
    q = np.asarray(q, dtype=float)
    return rhs_quaternion(q, params, model) - 0.5 * (q @ q - 1.0) * q


def frames_from_quaternion(q, t, params):
    """Lab frame at time ``t`` from the magnetic-frame orientation.

    ``e_i`` are the columns of ``Q R3(a t)^T``.
    """
    return FrameState.from_matrix(quat_to_rotation(q) @ rot3(params.a * t).T)


def eb_from_quaternion(q, params):
    Q = quat_to_rotation(q)
    return EBState(Q[:, 2].copy(), Q @ params.field_direction())


def random_quaternions(rng, n):
    """``n`` unit quaternions uniform on the 3-sphere (normalized Gaussians)."""
    g = rng.standard_normal((n, 4))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def kernel_rhs(kind):
    """The compiled handle for ``kind`` in {'quaternion', 'frames', 'eB'}."""
    return {"quaternion": QUATERNION_SYSTEM, "frames": FRAMES_SYSTEM, "eB": EB_SYSTEM}[kind]

