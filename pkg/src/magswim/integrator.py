"""Adaptive Dormand-Prince 5(4) integration with dense output and event location.

The stepping loop is a numba kernel. The built-in systems (handles of type
``CompiledSystem``) run entirely in compiled code; any other Python
callable ``rhs(t, y, args)`` goes through the same loop uncompiled.
"""

from __future__ import annotations

import math
import types
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._kernels import CompiledSystem, system_rhs

__all__ = [
    "IntegratorConfig",
    "IntegrationError",
    "Event",
    "EventRecord",
    "Trajectory",
    "integrate",
    "flow_map_with_sensitivity",
]


class IntegrationError(RuntimeError):
    """Step size underflow or step budget exhausted.

    ``t`` and ``y`` hold the last accepted state.
    """

    def __init__(self, msg, t=None, y=None):
        super().__init__(msg)
        self.t = t
        self.y = y


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_step: float = math.inf
    initial_step: float | None = None
    max_steps: int = 50_000_000

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not 1e-14 <= v <= 1e-2:
                raise ValueError(f"{name}={v} outside [1e-14, 1e-2]")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial_step must be positive")

    @classmethod
    def for_mason(cls, a, **kw):
        """Default config with ``max_step = min(0.1, 0.1/a)``."""
        return cls(max_step=min(0.1, 0.1 / a), **kw)


@dataclass(frozen=True)
class Event:
    """Scalar event function ``fn(t, y)``.

    ``direction`` > 0 keeps only rising zero crossings, < 0 only falling
    ones. With ``vectorized`` the function is called once on all step
    endpoints, ``fn(ts, ys)`` with ``ys`` of shape (n, d).
    """

    fn: object
    direction: int = 0
    terminal: bool = False
    vectorized: bool = False


@dataclass(frozen=True)
class EventRecord:
    event: int
    t: float
    y: np.ndarray


_call = system_rhs

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_A71, _A73, _A74, _A75, _A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
# dense output (Hairer & Wanner, contd5)
_D1, _D3, _D4, _D5, _D6, _D7 = (
    -12715105075 / 11282082432, 87487479700 / 32700410799, -10690763975 / 1880347072,
    701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423)


@njit(cache=True)
def _err_norm(err, y, ynew, rtol, atol):
    s = 0.0
    n = y.shape[0]
    for i in range(n):
        sk = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        s += (err[i] / sk) ** 2
    return math.sqrt(s / n)


@njit(cache=True)
def _initial_step(rhs, t0, y0, f0, args, rtol, atol, tdir, max_step):
    n = y0.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sk = atol + rtol * abs(y0[i])
        d0 += (y0[i] / sk) ** 2
        d1 += (f0[i] / sk) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, max_step)
    y1 = y0 + tdir * h0 * f0
    f1 = _call(rhs, t0 + tdir * h0, y1, args)
    d2 = 0.0
    for i in range(n):
        sk = atol + rtol * abs(y0[i])
        d2 += ((f1[i] - f0[i]) / sk) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, max_step)


@njit(cache=True)
def _dopri_kernel(rhs, t0, t1, y0, args, rtol, atol, max_step, h_init, max_steps, keep_dense):
    """Integrate from t0 to t1 (t1 > t0).

    Returns (status, ts, ys, rcont, nsteps). status: 0 ok, 1 step size
    underflow, 2 step budget exhausted.
    """
    n = y0.shape[0]
    cap = 1024
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    if keep_dense:
        rc = np.empty((cap, 5, n))
    else:
        rc = np.empty((1, 5, n))
    t = t0
    y = y0.copy()
    ts[0] = t
    ys[0] = y
    k1 = _call(rhs, t, y, args)
    if h_init > 0.0:
        h = min(h_init, max_step)
    else:
        h = _initial_step(rhs, t, y, k1, args, rtol, atol, 1.0, max_step)
    nacc = 0
    nsteps = 0
    status = 0
    reject = False
    while t < t1:
        if nsteps >= max_steps:
            status = 2
            break
        if h < 1e-14 * max(abs(t), 1.0):
            status = 1
            break
        last = False
        if t + h >= t1:
            h = t1 - t
            last = True
        nsteps += 1
        k2 = _call(rhs, t + _C2 * h, y + h * (_A21 * k1), args)
        k3 = _call(rhs, t + _C3 * h, y + h * (_A31 * k1 + _A32 * k2), args)
        k4 = _call(rhs, t + _C4 * h, y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3), args)
        k5 = _call(rhs, t + _C5 * h, y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), args)
        k6 = _call(rhs, t + h, y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5), args)
        ynew = y + h * (_A71 * k1 + _A73 * k3 + _A74 * k4 + _A75 * k5 + _A76 * k6)
        if last:
            tnew = t1
        else:
            tnew = t + h
        k7 = _call(rhs, tnew, ynew, args)
        errv = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
        err = _err_norm(errv, y, ynew, rtol, atol)
        if err <= 1.0:
            nacc += 1
            if nacc >= cap:
                cap *= 2
                ts2 = np.empty(cap)
                ts2[:nacc] = ts[:nacc]
                ts = ts2
                ys2 = np.empty((cap, n))
                ys2[:nacc] = ys[:nacc]
                ys = ys2
                if keep_dense:
                    rc2 = np.empty((cap, 5, n))
                    rc2[:nacc - 1] = rc[:nacc - 1]
                    rc = rc2
            if keep_dense:
                ydiff = ynew - y
                bspl = h * k1 - ydiff
                rc[nacc - 1, 0] = y
                rc[nacc - 1, 1] = ydiff
                rc[nacc - 1, 2] = bspl
                rc[nacc - 1, 3] = ydiff - h * k7 - bspl
                rc[nacc - 1, 4] = h * (_D1 * k1 + _D3 * k3 + _D4 * k4 + _D5 * k5 + _D6 * k6 + _D7 * k7)
            ts[nacc] = tnew
            ys[nacc] = ynew
            t = tnew
            y = ynew
            k1 = k7
            fac = 0.9 * max(err, 1e-10) ** -0.2
            if reject:
                fac = min(fac, 1.0)
            h = min(h * min(5.0, max(0.2, fac)), max_step)
            reject = False
        else:
            h = h * max(0.1, 0.9 * err ** -0.2)
            reject = True
    m = nacc + 1
    if keep_dense:
        return status, ts[:m].copy(), ys[:m].copy(), rc[:nacc].copy(), nsteps
    return status, ts[:m].copy(), ys[:m].copy(), rc[:0].copy(), nsteps


def _uncompiled(fn, **replace):
    """Pure-Python copy of a jitted function with some globals swapped."""
    g = dict(fn.py_func.__globals__)
    g.update(replace)
    return types.FunctionType(fn.py_func.__code__, g, fn.py_func.__name__)


def _call_python(rhs, t, y, args):
    return np.asarray(rhs(t, y, args), dtype=float)


_initial_step_py = _uncompiled(_initial_step, _call=_call_python)
_dopri_kernel_py = _uncompiled(
    _dopri_kernel, _call=_call_python, _err_norm=_err_norm.py_func, _initial_step=_initial_step_py)


@njit(cache=True)
def _dense_eval(rc_step, theta):
    th1 = 1.0 - theta
    return rc_step[0] + theta * (rc_step[1] + th1 * (rc_step[2] + theta * (rc_step[3] + th1 * rc_step[4])))


class Trajectory:
    """Accepted steps of one integration plus the dense interpolant.

    ``traj(t)`` evaluates the continuous extension at scalar or array ``t``;
    at the accepted step times it returns the stored states exactly.
    """

    def __init__(self, times, states, rcont=None, events=None, nsteps=0, step_sizes=None):
        self.times = np.asarray(times)
        self.states = np.asarray(states)
        self._rcont = rcont
        self._h = np.diff(self.times) if step_sizes is None else np.asarray(step_sizes)
        self.events = list(events or [])
        self.nsteps = nsteps

    def __len__(self):
        return len(self.times)

    @property
    def t(self):
        return self.times

    @property
    def y(self):
        return self.states

    @property
    def has_dense(self):
        return self._rcont is not None and len(self._rcont) == len(self.times) - 1

    def _eval_one(self, t):
        ts = self.times
        if t < ts[0] or t > ts[-1]:
            raise ValueError(f"t={t} outside [{ts[0]}, {ts[-1]}]")
        i = int(np.searchsorted(ts, t, side="left"))
        if i < len(ts) and ts[i] == t:
            return self.states[i].copy()
        if not self.has_dense:
            raise ValueError("trajectory was computed without dense output")
        j = i - 1
        return _dense_eval(self._rcont[j], (t - ts[j]) / self._h[j])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return self._eval_one(float(t))
        return np.array([self._eval_one(float(s)) for s in t])

    def window(self, t_start, t_end=None):
        """Accepted samples with ``t_start <= t <= t_end``."""
        t_end = self.times[-1] if t_end is None else t_end
        mask = (self.times >= t_start) & (self.times <= t_end)
        return self.times[mask], self.states[mask]

    def sample(self, times):
        return self(np.asarray(times, dtype=float))


def _locate_events(traj, events, t_tol):
    records = []
    ts, ys = traj.times, traj.states
    stop = None
    for k, ev in enumerate(events):
        if ev.vectorized:
            g = np.asarray(ev.fn(ts, ys), dtype=float)
        else:
            g = np.array([ev.fn(t, y) for t, y in zip(ts, ys)], dtype=float)
        sgn = np.sign(g)
        idx = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
        # exact zeros at step ends count once, as a crossing into the next step
        zero = np.nonzero((g[1:] == 0.0) & (g[:-1] != 0.0))[0]
        for j in sorted(set(idx.tolist()) | set(zero.tolist())):
            rising = g[j + 1] > g[j]
            if ev.direction > 0 and not rising or ev.direction < 0 and rising:
                continue
            if g[j + 1] == 0.0:
                tz = ts[j + 1]
            else:
                lo, hi = ts[j], ts[j + 1]
                glo = g[j]
                while hi - lo > t_tol:
                    mid = 0.5 * (lo + hi)
                    gm = ev.fn(mid, traj(mid)) if not ev.vectorized else float(
                        np.asarray(ev.fn(np.array([mid]), traj(mid)[None, :]))[0])
                    if gm == 0.0:
                        lo = hi = mid
                        break
                    if np.sign(gm) == np.sign(glo):
                        lo, glo = mid, gm
                    else:
                        hi = mid
                tz = 0.5 * (lo + hi)
            records.append(EventRecord(k, float(tz), traj(tz)))
            if ev.terminal:
                stop = tz if stop is None else min(stop, tz)
                break
    records.sort(key=lambda r: (r.t, r.event))
    if stop is not None:
        records = [r for r in records if r.t <= stop]
    return records, stop


def _is_compiled(fn):
    return isinstance(fn, CompiledSystem)


def integrate(rhs, y0, t_span, cfg=None, events=(), args=None, dense=True):
    """Integrate ``y' = rhs(t, y, args)`` over ``t_span``.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, y, args) -> ndarray``, or a ``CompiledSystem`` handle for
        the built-in systems.
    y0 : array_like
    t_span : (float, float)
        ``t1 > t0`` is required.
    cfg : IntegratorConfig, optional
    events : sequence of Event or callables
        Zero crossings are bracketed on the accepted steps and refined by
        bisection on the dense output to ``1e-12 (t1 - t0)``.
    args : ndarray, optional
        Passed through to ``rhs``.
    dense : bool
        Keep the dense-output coefficients (required for events).

    Returns
    -------
    Trajectory
        With ``events`` holding the located EventRecords. A terminal event
        truncates the trajectory at the event time.

    Raises
    ------
    IntegrationError
        On step size underflow or when ``cfg.max_steps`` is exceeded.
    """
    cfg = cfg or IntegratorConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must satisfy t1 > t0")
    y0 = np.array(y0, dtype=float).ravel()
    if args is None:
        args = np.zeros(0)
    events = [ev if isinstance(ev, Event) else Event(ev) for ev in events]
    keep_dense = bool(dense or events)
    h_init = -1.0 if cfg.initial_step is None else float(cfg.initial_step)
    max_step = float(min(cfg.max_step, t1 - t0))
    if _is_compiled(rhs):
        kernel, sys = _dopri_kernel, rhs.sid
    else:
        kernel, sys = _dopri_kernel_py, rhs
    status, ts, ys, rc, nsteps = kernel(
        sys, t0, t1, y0, np.asarray(args, dtype=float), float(cfg.rel_tol), float(cfg.abs_tol),
        max_step, h_init, int(cfg.max_steps), keep_dense)
    if status == 1:
        raise IntegrationError(f"step size underflow at t={ts[-1]:.17g}", ts[-1], ys[-1])
    if status == 2:
        raise IntegrationError(f"max_steps={cfg.max_steps} exceeded at t={ts[-1]:.17g}", ts[-1], ys[-1])
    traj = Trajectory(ts, ys, rc if keep_dense else None, nsteps=nsteps)
    if events:
        records, stop = _locate_events(traj, events, 1e-12 * (t1 - t0))
        if stop is not None:
            k = int(np.searchsorted(ts, stop, side="right"))
            y_stop = traj(stop)
            ts2 = np.append(ts[:k], stop) if ts[k - 1] != stop else ts[:k]
            ys2 = np.vstack([ys[:k], y_stop]) if ts[k - 1] != stop else ys[:k]
            # the truncated last step keeps the interpolant of the full step
            h = np.diff(ts)[:len(ts2) - 1]
            traj = Trajectory(ts2, ys2, rc[:len(ts2) - 1], nsteps=nsteps, step_sizes=h)
        traj.events = records
    return traj


def _fd_step(y):
    return math.sqrt(np.finfo(float).eps) * (1.0 + np.linalg.norm(y))


def variational_rhs(rhs, jac=None):
    """Right-hand side of the state plus its first variational equation.

    The augmented state is ``[y, vec(Phi)]`` (row-major ``Phi``). Without an
    analytic ``jac`` the Jacobian is taken by central differences with step
    ``sqrt(eps) (1 + |y|)``.
    """
    if jac is None and _is_compiled(rhs):
        return rhs.variational()

    def var_rhs(t, Y, args):
        L = Y.shape[0]
        n = int(round((math.sqrt(1.0 + 4.0 * L) - 1.0) / 2.0))
        y = Y[:n]
        f = np.asarray(rhs(t, y, args), dtype=float)
        if jac is not None:
            J = np.asarray(jac(t, y, args), dtype=float)
        else:
            h = _fd_step(y)
            J = np.empty((n, n))
            for j in range(n):
                e = np.zeros(n)
                e[j] = h
                J[:, j] = (np.asarray(rhs(t, y + e, args)) - np.asarray(rhs(t, y - e, args))) / (2 * h)
        phi = Y[n:].reshape(n, n)
        return np.concatenate([f, (J @ phi).ravel()])

    return var_rhs


@dataclass
class FlowResult:
    y: np.ndarray
    sensitivity: np.ndarray
    nsteps: int = field(default=0)

    def __iter__(self):
        yield self.y
        yield self.sensitivity


def flow_map_with_sensitivity(rhs, y0, T, cfg=None, jac=None, args=None):
    """Flow map ``y0 -> y(T)`` and its Jacobian ``d y(T) / d y0``.

    The sensitivity comes from integrating the variational equations
    alongside the state. Unpacks as ``(y_T, Phi)``.
    """
    y0 = np.array(y0, dtype=float).ravel()
    n = y0.size
    if T == 0:
        return FlowResult(y0.copy(), np.eye(n))
    if T < 0:
        raise ValueError("T must be nonnegative")
    Y0 = np.concatenate([y0, np.eye(n).ravel()])
    traj = integrate(variational_rhs(rhs, jac), Y0, (0.0, float(T)), cfg, args=args, dense=False)
    Y = traj.states[-1]
    return FlowResult(Y[:n].copy(), Y[n:].reshape(n, n).copy(), traj.nsteps)
