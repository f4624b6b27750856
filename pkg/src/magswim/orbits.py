"""Periodic orbits of the quaternion system: detection, shooting, Floquet analysis, continuation.

Orientation states are unit quaternions, a double cover of SO(3). An orbit
is *symmetric* when the quaternion loop closes on ``-q0`` after one SO(3)
period; the quaternion recurrence time is then twice the physical period.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import FREE_PARAMS, Parameters, pack_args
from ._kernels import QUATERNION_PARAM_SYSTEM, QUATERNION_SYSTEM
from .integrator import IntegratorConfig, flow_map_with_sensitivity, integrate

__all__ = [
    "OrbitError",
    "DetectionError",
    "ShootingError",
    "Candidate",
    "SteadyState",
    "PeriodicOrbit",
    "quat_distance",
    "default_transient",
    "shooting_config",
    "detect_recurrence",
    "shoot_periodic",
    "restricted_multipliers",
    "find_attractor",
    "time_reversal_residual",
    "ContinuationPoint",
    "BranchEvent",
    "ContinuationBranch",
    "continue_branch",
]

TRIVIAL_TOL = 1e-4


class OrbitError(RuntimeError):
    pass


class DetectionError(OrbitError):
    """No recurrence within the available trajectory."""


class ShootingError(OrbitError):
    pass


def quat_distance(p, q):
    """Double-cover-aware distance ``min(|p - q|, |p + q|)``."""
    p, q = np.asarray(p), np.asarray(q)
    return min(np.linalg.norm(p - q), np.linalg.norm(p + q))


def default_transient(a):
    """Transient discarded before detection: 50 time units or 10 field revolutions."""
    return max(50.0, 10 * 2 * math.pi / a)


def shooting_config(a, tol=1e-12):
    return IntegratorConfig(rel_tol=tol, abs_tol=tol, max_step=min(0.1, 0.1 / a))


@dataclass(frozen=True)
class Candidate:
    """Recurrence found on a trajectory.

    ``period`` is the SO(3) period. ``quaternion_period`` doubles it for
    symmetric recurrences.
    """

    q0: np.ndarray
    period: float
    symmetric: bool
    t0: float
    distance: float

    @property
    def quaternion_period(self):
        return 2 * self.period if self.symmetric else self.period


@dataclass(frozen=True)
class SteadyState:
    """Relative equilibrium: a fixed point of the quaternion system."""

    q: np.ndarray
    params: Parameters
    speed: float


@dataclass(frozen=True)
class PeriodicOrbit:
    """Converged periodic orbit.

    ``floquet`` holds the eigenvalues of ``s dPhi_T`` restricted to the
    tangent space of the unit sphere at ``q0``, with ``s = -1`` for
    symmetric orbits and ``T`` the SO(3) period.
    """

    q0: np.ndarray
    period: float
    quaternion_symmetric: bool
    floquet: np.ndarray
    params: Parameters
    residual: float = 0.0
    iterations: int = 0

    @property
    def sign(self):
        return -1 if self.quaternion_symmetric else 1

    def _trivial_index(self):
        return int(np.argmin(np.abs(self.floquet - 1.0)))

    @property
    def trivial_multiplier(self):
        return self.floquet[self._trivial_index()]

    @property
    def nontrivial_multipliers(self):
        return np.delete(self.floquet, self._trivial_index())

    @property
    def max_nontrivial_abs(self):
        return float(np.max(np.abs(self.nontrivial_multipliers)))

    @property
    def stable(self):
        return self.max_nontrivial_abs < 1.0


# --------------------------------------------------------------------------
# detection
# --------------------------------------------------------------------------

def _section_crossings(traj, t0, normal, offset, direction):
    """Times after ``t0`` where ``normal . q - offset`` crosses zero in ``direction``."""
    ts, ys = traj.times, traj.states[:, :4]
    mask = ts > t0
    idx0 = max(int(np.argmax(mask)) - 1, 0) if mask.any() else len(ts)
    ts, ys = ts[idx0:], ys[idx0:]
    g = ys @ normal - offset
    out = []
    for j in np.nonzero((g[:-1] * direction < 0) & (g[1:] * direction >= 0))[0]:
        lo, hi, glo = ts[j], ts[j + 1], g[j]
        if hi <= t0:
            continue
        lo = max(lo, t0)
        glo = traj(lo)[:4] @ normal - offset
        if glo * direction >= 0:
            continue
        for _ in range(200):
            if hi - lo <= 1e-13 * max(1.0, abs(hi)):
                break
            mid = 0.5 * (lo + hi)
            gm = traj(mid)[:4] @ normal - offset
            if gm * direction < 0:
                lo = mid
            else:
                hi = mid
        out.append(0.5 * (lo + hi))
    return out


def detect_recurrence(traj, transient=0.0, tol=1e-3, velocity=None, steady_tol=1e-8):
    """First return of a quaternion trajectory to ``+-q(t0)``.

    Parameters
    ----------
    traj : Trajectory
        Quaternion trajectory with dense output.
    transient : float
        Samples before ``t0 = times[0] + transient`` are ignored.
    tol : float
        Detection tolerance on the quaternion distance at the section.
    velocity : callable, optional
        ``velocity(q)`` giving the flow direction; defaults to a central
        difference of the dense output.
    steady_tol : float
        Speed below which the state at ``t0`` is reported as steady.

    Returns
    -------
    Candidate or SteadyState

    Raises
    ------
    DetectionError
        When neither a recurrence nor a steady state is found.
    """
    t0 = float(traj.times[0] + transient)
    t_end = float(traj.times[-1])
    if not t0 < t_end:
        raise DetectionError("trajectory shorter than the transient")
    q_ref = np.asarray(traj(t0))[:4]
    if velocity is None:
        h = 1e-5
        lo, hi = max(t0 - h, traj.times[0]), min(t0 + h, t_end)
        v = (np.asarray(traj(hi))[:4] - np.asarray(traj(lo))[:4]) / (hi - lo)
    else:
        v = np.asarray(velocity(q_ref), dtype=float)
    speed = float(np.linalg.norm(v))
    if speed < steady_tol:
        return SteadyState(q_ref / np.linalg.norm(q_ref), None, speed)
    found = _scan(traj, q_ref, t0, v, tol, t_start=t0)
    if found is None:
        raise DetectionError(
            f"no recurrence within tolerance {tol:g} on [{t0:.6g}, {t_end:.6g}]; "
            "trajectory may be quasi-periodic or still transient")
    t, symmetric, d = found
    return Candidate(q_ref.copy(), float(t - t0), symmetric, t0, d)


# --------------------------------------------------------------------------
# shooting
# --------------------------------------------------------------------------

def _flow(q, T, params, model, cfg):
    return flow_map_with_sensitivity(QUATERNION_SYSTEM, q, T, cfg, args=pack_args(params, model))


def _vector_field(q, params, model):
    return QUATERNION_SYSTEM(0.0, q, pack_args(params, model))


def _tangent_basis(q):
    """Orthonormal basis (4x3) of the complement of ``q``."""
    q = q / np.linalg.norm(q)
    u, _, _ = np.linalg.svd(q.reshape(4, 1), full_matrices=True)
    return u[:, 1:]


def restricted_multipliers(monodromy, q0):
    """Eigenvalues of ``monodromy`` restricted to the complement of ``q0``."""
    V = _tangent_basis(np.asarray(q0, dtype=float))
    return np.linalg.eigvals(V.T @ monodromy @ V)


def shoot_periodic(candidate, model, params, cfg=None, tol=1e-10, max_iter=25):
    """Refine a recurrence candidate into a periodic orbit by Newton shooting.

    Unknowns are ``(q, T)``; equations are ``s Phi_T(q) - q = 0`` and the
    phase condition ``f(q_ref) . (q - q_ref) = 0``.

    Raises
    ------
    ShootingError
        After ``max_iter`` iterations or on a singular bordered Jacobian.
    """
    cfg = cfg or shooting_config(params.a)
    s = -1.0 if candidate.symmetric else 1.0
    q_ref = np.asarray(candidate.q0, dtype=float)
    q_ref = q_ref / np.linalg.norm(q_ref)
    f_ref = _vector_field(q_ref, params, model)
    q, T = q_ref.copy(), float(candidate.period)
    res = math.inf
    for it in range(max_iter + 1):
        y, dphi = _flow(q, T, params, model, cfg)
        r = s * y - q
        res = float(np.linalg.norm(r))
        if res < tol:
            orbit = PeriodicOrbit(q, T, bool(candidate.symmetric),
                                  restricted_multipliers(s * dphi, q), params, res, it)
            return orbit
        if it == max_iter:
            break
        J = np.zeros((5, 5))
        J[:4, :4] = s * dphi - np.eye(4)
        J[:4, 4] = s * _vector_field(y, params, model)
        J[4, :4] = f_ref
        rhs = -np.concatenate([r, [f_ref @ (q - q_ref)]])
        try:
            dx = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError as exc:
            raise ShootingError("singular bordered Jacobian") from exc
        if not np.all(np.isfinite(dx)):
            raise ShootingError("singular bordered Jacobian")
        q = q + dx[:4]
        T = T + dx[4]
        if not T > 0:
            raise ShootingError(f"period became nonpositive ({T:g})")
    raise ShootingError(f"Newton stagnated after {max_iter} iterations, residual {res:.3e}")


def time_reversal_residual(model, params, q0, duration, cfg=None, samples=200):
    """Check the symmetry ``Q(t) -> Q(-t) R2(pi)`` on one trajectory segment.

    Integrates ``q`` from ``q0`` over ``duration``, then integrates the image
    of the end point and compares it with the reversed, transformed segment.
    Returns the largest rotation-matrix discrepancy.
    """
    from .dynamics import quat_to_rotation, rotation_to_quat

    cfg = cfg or shooting_config(params.a)
    args = pack_args(params, model)
    fwd = integrate(QUATERNION_SYSTEM, np.asarray(q0, dtype=float), (0.0, duration), cfg, args=args)
    R2 = np.diag([-1.0, 1.0, -1.0])
    start = rotation_to_quat(quat_to_rotation(fwd.states[-1]) @ R2)
    image = integrate(QUATERNION_SYSTEM, start, (0.0, duration), cfg, args=args)
    ts = np.linspace(0.0, duration, samples)
    return max(float(np.abs(quat_to_rotation(image(s)) - quat_to_rotation(fwd(duration - s)) @ R2).max())
               for s in ts)


def find_attractor(model, params, q_init=(0.0, 0.0, 0.0, 1.0), transient=None, horizon=None,
                   cfg=None, tol=1e-3, shoot=True, chunk=20000.0):
    """Integrate, discard the transient and classify the attractor.

    The search after the transient runs in chunks of ``chunk`` time units
    so that very long periods do not require storing the whole dense
    trajectory.

    Returns
    -------
    SteadyState, PeriodicOrbit or Candidate
        A ``Candidate`` only when ``shoot=False``.

    Raises
    ------
    DetectionError
        No recurrence within ``horizon`` after the transient.
    """
    a = params.a
    transient = default_transient(a) if transient is None else float(transient)
    horizon = max(4 * 2 * math.pi / a, 200.0) if horizon is None else float(horizon)
    cfg = cfg or IntegratorConfig(rel_tol=1e-11, abs_tol=1e-11, max_step=min(0.1, 0.1 / a))
    args = pack_args(params, model)
    velocity = lambda q: QUATERNION_SYSTEM(0.0, q, args)
    q = np.array(q_init, dtype=float)
    q = q / np.linalg.norm(q)
    if transient > 0:
        q = integrate(QUATERNION_SYSTEM, q, (0.0, transient), cfg, args=args, dense=False).states[-1]
    speed = float(np.linalg.norm(velocity(q)))
    if speed < 1e-8:
        return SteadyState(q / np.linalg.norm(q), params, speed)
    t, t_end = transient, transient + horizon
    q_ref, t_ref = q.copy(), transient
    while t < t_end:
        t1 = min(t + chunk, t_end)
        traj = integrate(QUATERNION_SYSTEM, q, (t, t1), cfg, args=args)
        found = _scan(traj, q_ref, t_ref, velocity(q_ref), tol)
        if found is not None:
            t_hit, symmetric, d = found
            cand = Candidate(q_ref, float(t_hit - t_ref), symmetric, t_ref, d)
            return shoot_periodic(cand, model, params) if shoot else cand
        q, t = traj.states[-1], t1
        if float(np.linalg.norm(velocity(q))) < 1e-8:
            return SteadyState(q / np.linalg.norm(q), params, float(np.linalg.norm(velocity(q))))
    raise DetectionError(
        f"no recurrence within tolerance {tol:g} on [{transient:.6g}, {t_end:.6g}]; "
        "trajectory may be quasi-periodic or still transient")


def _scan(traj, q_ref, t_ref, v_ref, tol, t_start=None):
    """Earliest section crossing within ``tol`` of ``+-q_ref``: (t, symmetric, distance)."""
    u = q_ref / np.linalg.norm(q_ref)
    n = v_ref - (v_ref @ u) * u
    n = n / np.linalg.norm(n)
    t_start = traj.times[0] if t_start is None else t_start
    best = None
    for sgn in (1, -1):
        # the plane through sgn q_ref, oriented along the flow there
        for t in _section_crossings(traj, t_start, sgn * n, n @ q_ref, 1):
            d = float(np.linalg.norm(np.asarray(traj(t))[:4] - sgn * q_ref))
            if t - t_ref > 1e-9 * max(1.0, t_ref) and d < tol:
                if best is None or t < best[0]:
                    best = (t, sgn < 0, d)
                break
    return best


# --------------------------------------------------------------------------
# continuation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuationPoint:
    params: Parameters
    orbit: PeriodicOrbit
    stable: bool
    tangent: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class BranchEvent:
    """``kind`` is 'fold' or 'stability'; ``index`` is the first point after the change."""

    kind: str
    index: int
    params: Parameters
    detail: str = ""


@dataclass
class ContinuationBranch:
    free_param: str
    points: list = field(default_factory=list)
    events: list = field(default_factory=list)
    diagnostic: str = ""

    def __len__(self):
        return len(self.points)

    def values(self):
        return np.array([getattr(p.params, self.free_param) for p in self.points])

    def periods(self):
        return np.array([p.orbit.period for p in self.points])

    def rows(self):
        evt = {}
        for e in self.events:
            evt.setdefault(e.index, []).append(e.kind)
        for k, p in enumerate(self.points):
            yield {
                "a": p.params.a,
                "psi": p.params.psi,
                "period": p.orbit.period,
                "symmetric": int(p.orbit.quaternion_symmetric),
                "max_nontrivial_multiplier_abs": p.orbit.max_nontrivial_abs,
                "stable": int(p.stable),
                "event": "+".join(evt.get(k, [])),
            }

    COLUMNS = ("a", "psi", "period", "symmetric", "max_nontrivial_multiplier_abs", "stable", "event")

    def to_csv(self, fh, header=()):
        """Write the branch table; ``header`` lines are emitted as ``#`` comments."""
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in (row[c] for c in self.COLUMNS)])


class _BranchSystem:
    """Periodic-orbit equations with the free parameter as an unknown.

    ``X = (q, log T, p)``; the log-period keeps steps bounded as the period
    blows up near homoclinic ends of a branch.
    """

    def __init__(self, model, params, free, s, cfg):
        self.model = model
        self.free = free
        self.s = s
        self.cfg = cfg
        self.base = params
        self.idx = FREE_PARAMS[free]

    def params_at(self, p):
        return self.base.with_(**{self.free: p})

    def _args(self, p):
        return pack_args(self.params_at_unchecked(p), self.model, self.free)

    def params_at_unchecked(self, p):
        # the corrector may step transiently outside the admissible range
        return _RawParams(self.base, self.free, p)

    def field(self, q, p):
        return QUATERNION_SYSTEM(0.0, q, pack_args(self.params_at_unchecked(p), self.model))

    def evaluate(self, X, q_ref, f_ref):
        q, logT, p = X[:4], X[4], X[5]
        T = math.exp(logT)
        y5 = np.concatenate([q, [p]])
        y, phi = flow_map_with_sensitivity(QUATERNION_PARAM_SYSTEM, y5, T, self.cfg, args=self._args(p))
        s = self.s
        r = np.concatenate([s * y[:4] - q, [f_ref @ (q - q_ref)]])
        J = np.zeros((5, 6))
        J[:4, :4] = s * phi[:4, :4] - np.eye(4)
        J[:4, 4] = s * self.field(y[:4], p) * T
        J[:4, 5] = s * phi[:4, 4]
        J[4, :4] = f_ref
        return r, J, s * phi[:4, :4]


@dataclass(frozen=True)
class _RawParams:
    base: Parameters
    free: str
    value: float

    @property
    def a(self):
        return self.value if self.free == "a" else self.base.a

    @property
    def psi(self):
        return self.value if self.free == "psi" else self.base.psi


def _null_vector(J, ref=None):
    _, _, vt = np.linalg.svd(J)
    t = vt[-1]
    if ref is not None and t @ ref < 0:
        t = -t
    return t / np.linalg.norm(t)


def continue_branch(seed, model, free_param, p_range, ds=0.02, ds_min=1e-5, ds_max=0.1,
                    max_points=400, direction=1, max_period=None, tol=1e-10, max_newton=8, cfg=None,
                    callback=None):
    """Pseudo-arclength continuation of a periodic orbit in ``a`` or ``psi``.

    Parameters
    ----------
    seed : PeriodicOrbit
    free_param : {'a', 'psi'}
    p_range : (float, float)
        Continuation stops when the parameter leaves this interval; the
        last point is then corrected onto the bound.
    direction : {1, -1}
        Initial direction of travel in the parameter.
    max_period : float, optional
        Stop when the period exceeds this value.
    callback : callable, optional
        Called with each accepted ``ContinuationPoint``.

    Returns
    -------
    ContinuationBranch
        ``diagnostic`` explains why continuation stopped.
    """
    if free_param not in FREE_PARAMS:
        raise ValueError(f"free parameter must be 'a' or 'psi', got {free_param!r}")
    lo, hi = p_range
    params = seed.params
    p0 = getattr(params, free_param)
    if not lo <= p0 <= hi:
        raise ValueError(f"seed {free_param}={p0} outside range [{lo}, {hi}]")
    # the largest Mason number on the branch sets the step bound
    cfg = cfg or shooting_config(params.a if free_param == "psi" else max(params.a, hi))
    sysm = _BranchSystem(model, params, free_param, float(seed.sign), cfg)
    branch = ContinuationBranch(free_param)
    if lo == hi:
        branch.points.append(ContinuationPoint(params, seed, seed.stable, np.eye(6)[5]))
        branch.diagnostic = "range collapsed to a point"
        return branch

    X = np.concatenate([seed.q0, [math.log(seed.period), p0]])
    q_ref = X[:4].copy()
    f_ref = sysm.field(q_ref, p0)
    _, J, _ = sysm.evaluate(X, q_ref, f_ref)
    t = _null_vector(J)
    if t[5] * direction < 0:
        t = -t
    branch.points.append(ContinuationPoint(params, seed, seed.stable, t))
    X_prev = None

    def accept(Xn, tn, mono, res, it):
        p = Xn[5]
        prm = sysm.params_at(p)
        orb = PeriodicOrbit(Xn[:4].copy(), math.exp(Xn[4]), seed.quaternion_symmetric,
                            restricted_multipliers(mono, Xn[:4]), prm, res, it)
        k = len(branch.points)
        prev = branch.points[-1]
        if prev.tangent[5] * tn[5] < 0:
            branch.events.append(BranchEvent("fold", k, prm, "parameter component of tangent changed sign"))
        if prev.stable != orb.stable:
            branch.events.append(BranchEvent(
                "stability", k, prm, f"max nontrivial |mu| {prev.orbit.max_nontrivial_abs:.6g} -> {orb.max_nontrivial_abs:.6g}"))
        branch.points.append(ContinuationPoint(prm, orb, orb.stable, tn))
        if callback is not None:
            callback(branch.points[-1])

    def correct(X_pred, tan, q_ref, f_ref, fix_p=None):
        Xc = X_pred.copy()
        for it in range(max_newton + 1):
            r, J, mono = sysm.evaluate(Xc, q_ref, f_ref)
            if fix_p is None:
                r6 = np.concatenate([r, [tan @ (Xc - X_pred)]])
                J6 = np.vstack([J, tan])
            else:
                r6 = np.concatenate([r, [Xc[5] - fix_p]])
                J6 = np.vstack([J, np.eye(6)[5]])
            res = float(np.linalg.norm(r))
            if res < tol and abs(r6[5]) < 1e-9:
                return Xc, J, mono, res, it
            if it == max_newton:
                return None
            try:
                dx = np.linalg.solve(J6, -r6)
            except np.linalg.LinAlgError:
                return None
            if not np.all(np.isfinite(dx)) or np.linalg.norm(dx) > 0.5:
                return None
            Xc = Xc + dx
        return None

    while len(branch.points) < max_points:
        Xc_prev = np.concatenate([branch.points[-1].orbit.q0,
                                  [math.log(branch.points[-1].orbit.period),
                                   getattr(branch.points[-1].params, free_param)]])
        tan = branch.points[-1].tangent
        if X_prev is not None:
            sec = Xc_prev - X_prev
            if np.linalg.norm(sec) > 0:
                sec = sec / np.linalg.norm(sec)
                tan = sec if sec @ tan > 0 else tan
        q_ref = Xc_prev[:4]
        f_ref = sysm.field(q_ref, Xc_prev[5])
        X_pred = Xc_prev + ds * tan
        out = correct(X_pred, tan, q_ref, f_ref)
        if out is None:
            ds *= 0.5
            if ds < ds_min:
                branch.diagnostic = (f"corrector failed with step below ds_min={ds_min:g} at "
                                     f"{free_param}={Xc_prev[5]:.12g}, period={math.exp(Xc_prev[4]):.6g}")
                branch.events.append(BranchEvent("corrector_failure", len(branch.points) - 1,
                                                 branch.points[-1].params, branch.diagnostic))
                return branch
            continue
        Xn, J, mono, res, it = out
        tn = _null_vector(J, tan)
        if not lo <= Xn[5] <= hi:
            bound = lo if Xn[5] < lo else hi
            end = correct(np.concatenate([Xn[:5], [bound]]), tn, q_ref, f_ref, fix_p=bound)
            if end is not None:
                Xe, Je, monoe, rese, ite = end
                accept(Xe, _null_vector(Je, tn), monoe, rese, ite)
            branch.diagnostic = f"reached {free_param} bound {bound:g}"
            return branch
        X_prev = Xc_prev
        accept(Xn, tn, mono, res, it)
        if max_period is not None and math.exp(Xn[4]) > max_period:
            branch.diagnostic = f"period exceeded {max_period:g}"
            return branch
        if it <= 2:
            ds = min(ds * 1.5, ds_max)
        elif it >= 5:
            ds = max(ds * 0.7, ds_min)
    branch.diagnostic = f"reached max_points={max_points}"
    return branch
