"""Magnetic-frame curves, circle fits and analytic-versus-numeric error metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import quat_to_rotation

__all__ = [
    "IncomparableError",
    "MagneticFrameCurve",
    "CircleFit",
    "CurveDistance",
    "magnetic_frame_curve",
    "curve_from_points",
    "fit_circle",
    "compare_period",
    "compare_curves",
    "write_curve_csv",
    "curve_metadata",
]


class IncomparableError(ValueError):
    """The analytic and numeric objects describe different behaviour."""


@dataclass(frozen=True)
class MagneticFrameCurve:
    """Samples of ``Q^T m``: the moment in magnetic-frame components."""

    times: np.ndarray
    points: np.ndarray

    def __len__(self):
        return len(self.times)

    def window(self, t_start=None, t_end=None):
        t_start = self.times[0] if t_start is None else t_start
        t_end = self.times[-1] if t_end is None else t_end
        mask = (self.times >= t_start) & (self.times <= t_end)
        return MagneticFrameCurve(self.times[mask], self.points[mask])


@dataclass(frozen=True)
class CircleFit:
    center: np.ndarray
    radius: float
    rms_residual: float
    normal: np.ndarray


@dataclass(frozen=True)
class CurveDistance:
    max: float
    mean: float


def curve_from_points(times, points):
    return MagneticFrameCurve(np.asarray(times, dtype=float), np.asarray(points, dtype=float))


def magnetic_frame_curve(traj, model, times=None):
    """``Q(q(t))^T m`` along a quaternion trajectory.

    With ``times`` the dense output is sampled; otherwise the accepted
    steps are used.
    """
    if times is None:
        times, qs = traj.times, traj.states
    else:
        times = np.asarray(times, dtype=float)
        qs = traj(times)
    m = np.asarray(model.m)
    pts = np.array([quat_to_rotation(q[:4]).T @ m for q in np.atleast_2d(qs)])
    return MagneticFrameCurve(np.asarray(times, dtype=float), pts)


def _points(curve):
    return curve.points if isinstance(curve, MagneticFrameCurve) else np.asarray(curve, dtype=float)


def fit_circle(curve, window=None, degenerate_tol=1e-12, iterations=20):
    """Least-squares circle through 3-D samples.

    The plane comes from principal components; within it an algebraic
    (Kasa) fit seeds a Gauss-Newton refinement of the geometric distance.
    Fixed or collinear samples give radius 0 centred on the mean.

    Raises
    ------
    ValueError
        With fewer than 10 samples.
    """
    if window is not None:
        curve = curve.window(*window)
    pts = _points(curve)
    if len(pts) < 10:
        raise ValueError(f"need at least 10 samples, got {len(pts)}")
    mean = pts.mean(axis=0)
    X = pts - mean
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    normal = vt[2]
    # fixed point or collinear samples
    if s[0] <= degenerate_tol * math.sqrt(len(pts)) or s[1] <= degenerate_tol * s[0]:
        return CircleFit(mean, 0.0, float(np.sqrt((X ** 2).sum(axis=1).mean())), normal)
    uv = X @ vt[:2].T
    M = np.column_stack([uv, np.ones(len(uv))])
    sol = np.linalg.lstsq(M, (uv ** 2).sum(axis=1), rcond=None)[0]
    c = sol[:2] / 2
    r = math.sqrt(max(sol[2] + c @ c, 0.0))
    for _ in range(iterations):
        d = uv - c
        rho = np.linalg.norm(d, axis=1)
        if np.any(rho == 0):
            break
        res = rho - r
        J = np.column_stack([-d / rho[:, None], -np.ones(len(rho))])
        step = np.linalg.lstsq(J, -res, rcond=None)[0]
        c, r = c + step[:2], r + step[2]
        if np.linalg.norm(step) <= 1e-15 * max(1.0, abs(r)):
            break
    r = abs(r)
    rho = np.linalg.norm(uv - c, axis=1)
    planar = X @ normal
    rms = float(np.sqrt(((rho - r) ** 2 + planar ** 2).mean()))
    return CircleFit(mean + c @ vt[:2], float(r), rms, normal)


def compare_period(numeric, analytic):
    """Relative period error ``|T_num - T_ana| / T_ana`` in physical time.

    Raises
    ------
    IncomparableError
        When the prediction is not periodic or the numeric attractor is
        not an orbit.
    """
    if getattr(analytic, "regime", "periodic") != "periodic":
        raise IncomparableError(f"prediction is in the {analytic.regime} regime")
    period = getattr(numeric, "period", None)
    if period is None:
        raise IncomparableError("numeric attractor is not a periodic orbit")
    return abs(period - analytic.period_t) / analytic.period_t


def compare_curves(numeric, predicted):
    """Phase-free distance from the numeric curve to the predicted one.

    The predicted samples are read as an ordered polyline; each numeric
    sample is measured against the two segments adjoining its nearest
    predicted vertex. ``max`` is the one-sided Hausdorff distance.
    """
    num, pred = _points(numeric), _points(predicted)
    k = min(2, len(pred))
    _, nearest = cKDTree(pred).query(num, k=k)
    nearest = np.asarray(nearest).reshape(len(num), k)
    best = np.linalg.norm(num - pred[nearest[:, 0]], axis=1)
    # the two nearest vertices cover the seam of a closed, repeated-endpoint polyline
    for idx in nearest.T:
        for shift in (-1, 1):
            nb = idx + shift
            ok = (nb >= 0) & (nb < len(pred))
            a, b, x = pred[idx[ok]], pred[nb[ok]], num[ok]
            seg = b - a
            L2 = np.einsum("ij,ij->i", seg, seg)
            w = np.clip(np.einsum("ij,ij->i", x - a, seg) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
            d = np.linalg.norm(x - (a + w[:, None] * seg), axis=1)
            best[ok] = np.minimum(best[ok], d)
    return CurveDistance(float(best.max()), float(best.mean()))


def write_curve_csv(fh, curve, header=()):
    """Write ``t, x, y, z`` rows at 17 significant digits."""
    for line in header:
        fh.write(f"# {line}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "x", "y", "z"])
    for t, p in zip(curve.times, curve.points):
        w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in p])


def curve_metadata(params, model_hash, provenance, **extra):
    """JSON text accompanying an exported curve."""
    doc = {"a": params.a, "psi": params.psi, "model_hash": model_hash, "provenance": provenance}
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
