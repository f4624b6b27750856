"""Matched simulate / analyse / predict pipelines for the three asymptotic regimes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import EB_SYSTEM, FRAMES_SYSTEM, QUATERNION_SYSTEM
from .analysis import compare_curves, compare_period, fit_circle, magnetic_frame_curve, IncomparableError
from .asymptotics import HighAPath, higha_predict, lowa_predict, smallpsi_predict
from .dynamics import pack_args, quat_to_rotation, rot3
from .integrator import IntegratorConfig, integrate
from .orbits import PeriodicOrbit, SteadyState, default_transient, find_attractor

__all__ = [
    "default_config",
    "LowAResult",
    "SmallPsiResult",
    "HighAResult",
    "lowa_experiment",
    "smallpsi_experiment",
    "higha_experiment",
    "norm_deviation",
    "formulation_observables",
    "formulation_agreement",
]


def default_config(a, tol=1e-11):
    return IntegratorConfig(rel_tol=tol, abs_tol=tol, max_step=min(0.1, 0.1 / a))


def norm_deviation(states):
    """``max | |q| - 1 |`` over the quaternion part of ``states``."""
    return float(np.max(np.abs(np.linalg.norm(np.atleast_2d(states)[:, :4], axis=1) - 1.0)))


def formulation_observables(model, params, q0, times, cfg=None):
    """``(e3, B)`` in body components along the three formulations.

    Returns a dict keyed by ``quaternion``, ``eB`` and ``frames``. The frames
    form is omitted when ``sin psi = 0``, where ``e1, e2`` are undefined.
    """
    times = np.asarray(times, dtype=float)
    cfg = cfg or IntegratorConfig(rel_tol=1e-10, abs_tol=1e-10, max_step=min(0.1, 0.1 / params.a))
    args = pack_args(params, model)
    span = (float(times[0]), float(times[-1]))
    q0 = np.asarray(q0, dtype=float) / np.linalg.norm(q0)
    Q0 = quat_to_rotation(q0)
    b_mag = params.field_direction()
    out = {}
    qs = integrate(QUATERNION_SYSTEM, q0, span, cfg, args=args)(times)
    Qs = np.array([quat_to_rotation(q) for q in qs])
    out["quaternion"] = (Qs[:, :, 2], Qs @ b_mag)
    y = integrate(EB_SYSTEM, np.concatenate([Q0[:, 2], Q0 @ b_mag]), span, cfg, args=args)(times)
    out["eB"] = (y[:, :3], y[:, 3:])
    if params.frame_defined:
        E0 = Q0 @ rot3(params.a * span[0]).T
        y = integrate(FRAMES_SYSTEM, E0.T.ravel(), span, cfg, args=args)(times)
        sp, cp = math.sin(params.psi), math.cos(params.psi)
        at = params.a * times[:, None]
        B = sp * (np.cos(at) * y[:, 0:3] + np.sin(at) * y[:, 3:6]) + cp * y[:, 6:9]
        out["frames"] = (y[:, 6:9], B)
    return out


def formulation_agreement(model, params, q0, t_end=100.0, samples=1001, cfg=None):
    """Largest pointwise difference of ``(e3, B)`` between formulations."""
    obs = formulation_observables(model, params, q0, np.linspace(0.0, t_end, samples), cfg)
    ref_e3, ref_B = obs["quaternion"]
    return max(float(max(np.abs(e3 - ref_e3).max(), np.abs(B - ref_B).max()))
               for e3, B in obs.values())


@dataclass(frozen=True)
class LowAResult:
    params: object
    prediction: object
    attractor: object
    rel_error: float | None

    @property
    def comparable(self):
        return self.rel_error is not None


def lowa_experiment(model, spec, params, q_init=(0.0, 0.0, 0.0, 1.0), cfg=None, shoot=False,
                    horizon_factor=1.5):
    """Period of the attractor at small ``a`` against the leading-order law.

    The search horizon scales with the predicted period. ``rel_error`` is
    None when prediction or attractor is not periodic.
    """
    pred = lowa_predict(spec, params)
    horizon = horizon_factor * pred.period_t if pred.periodic and math.isfinite(pred.period_t) \
        else max(4 * 2 * math.pi / params.a, 200.0)
    att = find_attractor(model, params, q_init=q_init, horizon=horizon, cfg=cfg or default_config(params.a),
                         shoot=shoot)
    try:
        err = compare_period(att, pred)
    except IncomparableError:
        err = None
    return LowAResult(params, pred, att, err)


@dataclass(frozen=True)
class SmallPsiResult:
    params: object
    prediction: object
    fit: object
    curve: object
    distance_order1: float
    distance_order2: float
    norm_deviation: float

    @property
    def center_error(self):
        return float(np.linalg.norm(self.fit.center - self.prediction.circle_center))

    @property
    def radius_error(self):
        return abs(self.fit.radius - self.prediction.circle_radius)


def smallpsi_experiment(model, spec, params, transient=None, samples=400, dense=20001, cfg=None):
    """Fit the attracting magnetic-frame curve and compare with the expansion."""
    a = params.a
    transient = max(default_transient(a), 2000.0) if transient is None else transient
    period = 2 * math.pi / a
    cfg = cfg or default_config(a)
    traj = integrate(QUATERNION_SYSTEM, [0.0, 0.0, 0.0, 1.0], (0.0, transient + period), cfg,
                     args=pack_args(params, model))
    times = np.linspace(transient, transient + period, samples)
    curve = magnetic_frame_curve(traj, model, times)
    fit = fit_circle(curve)
    pred = smallpsi_predict(model, spec, params, order=2)
    tt = np.linspace(0.0, period, dense)
    d1 = compare_curves(curve, pred.expansion.magnetic_curve(tt, order=1)).max
    d2 = compare_curves(curve, pred.expansion.magnetic_curve(tt, order=2)).max
    return SmallPsiResult(params, pred, fit, curve, d1, d2, norm_deviation(traj.states))


@dataclass(frozen=True)
class HighAResult:
    params: object
    prediction: object
    alignment: float
    tau_rate_fit: float
    curve_distance: float
    norm_deviation: float

    @property
    def tau_rel_error(self):
        return abs(self.tau_rate_fit / self.prediction.tau_rate - 1.0)


def higha_experiment(model, spec, params, transient=600.0, window=3000.0, samples=30001, cfg=None):
    """Alignment, secular drift and curve distance at large ``a``.

    The in-plane angle is ``atan2(e1 . beta2, e1 . beta1)``, unwrapped and
    fitted linearly over ``window`` after the transient.
    """
    a = params.a
    cfg = cfg or default_config(a)
    traj = integrate(QUATERNION_SYSTEM, [0.0, 0.0, 0.0, 1.0], (0.0, transient + window), cfg,
                     args=pack_args(params, model))
    ts = np.linspace(transient, transient + window, samples)
    qs = traj(ts)
    vs = params.varsigma
    E = np.array([quat_to_rotation(q) @ rot3(a * t).T for q, t in zip(qs, ts)])
    e1, e3 = E[:, :, 0], E[:, :, 2]
    alignment = float(np.linalg.norm(e3 - vs * spec.beta0, axis=1).max())
    tau = np.unwrap(np.arctan2(e1 @ spec.beta2, e1 @ spec.beta1))
    slope = float(np.polyfit(ts - ts[0], tau, 1)[0])
    pred = higha_predict(spec, params, float(tau[0]))
    period = 2 * math.pi / a
    tt = np.linspace(transient, transient + period, 400)
    curve = magnetic_frame_curve(traj, model, tt)
    path = HighAPath(spec, params, model, tau0=float(tau[0]))
    dist = compare_curves(curve, path.magnetic_curve(np.linspace(0.0, period, 4001))).max
    return HighAResult(params, pred, alignment, slope, dist, norm_deviation(traj.states))
