"""Closed-form asymptotic predictions: low Mason number, high Mason number, small conical angle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import FrameState, Parameters, rot3
from .integrator import Event, IntegratorConfig, integrate

__all__ = [
    "RegimeError",
    "LowAPrediction",
    "HighAPrediction",
    "SmallPsiPrediction",
    "lowa_rate",
    "lowa_predict",
    "lowa_period_quadrature",
    "lowa_reduced_flow",
    "LowAFlow",
    "guiding_g1",
    "guiding_g2",
    "higha_guiding_rhs",
    "frozen_average",
    "higha_predict",
    "higha_tau_rate_projection",
    "HighAPath",
    "smallpsi_predict",
    "SmallPsiExpansion",
]

BOUNDARY_TOL = 1e-12


class RegimeError(ValueError):
    """Parameters outside the validity domain of a prediction."""


def _p_from_spectrum(spec):
    return spec.eta @ np.diag(spec.sigmas) @ spec.beta.T


# --------------------------------------------------------------------------
# low Mason number
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LowAPrediction:
    """Leading-order dynamics for ``a -> 0``.

    ``period_T`` is in rescaled time ``T = a t``; ``period_t = period_T / a``.
    In the boundary regime both periods are infinite.
    """

    regime: str
    a: float
    psi: float
    lambda_stable: float | None = None
    lambda_unstable: float | None = None
    period_T: float | None = None
    period_t: float | None = None
    direction: str | None = None

    @property
    def periodic(self):
        return self.regime == "periodic"


def lowa_rate(lam, spec, psi):
    """``d lambda / dT = cos psi - sin psi tan iota sin(lambda - zeta)``."""
    return math.cos(psi) - math.sin(psi) * math.tan(spec.iota) * np.sin(np.asarray(lam) - spec.zeta)


def lowa_predict(spec, params):
    """Equilibria or period of the reduced angle dynamics.

    Returns an equilibrium prediction when ``|psi - pi/2| < iota``, a
    periodic one when ``|psi - pi/2| > iota`` and a boundary record with
    infinite period within ``1e-12`` of the transition.
    """
    psi, iota = params.psi, spec.iota
    gap = abs(psi - math.pi / 2) - iota
    if abs(gap) <= BOUNDARY_TOL:
        return LowAPrediction("boundary", params.a, psi, period_T=math.inf, period_t=math.inf)
    if gap < 0:
        c = math.cos(psi) * math.cos(iota) / (math.sin(psi) * math.sin(iota))
        delta = math.acos(max(-1.0, min(1.0, c)))
        base = spec.zeta + math.pi / 2
        return LowAPrediction(
            "equilibrium", params.a, psi,
            lambda_stable=(base - delta) % (2 * math.pi),
            lambda_unstable=(base + delta) % (2 * math.pi))
    period_T = 2 * math.pi * math.cos(iota) / math.sqrt(math.cos(iota + psi) * math.cos(iota - psi))
    direction = "clockwise" if psi < math.pi / 2 else "anticlockwise"
    return LowAPrediction("periodic", params.a, psi, period_T=period_T,
                          period_t=period_T / params.a, direction=direction)


def lowa_period_quadrature(spec, psi, n=None):
    """Period of the reduced flow by quadrature of ``1 / (d lambda/dT)``.

    The integrand is smooth and periodic, so the trapezoidal rule converges
    geometrically.
    """
    from scipy.integrate import quad

    f = lambda lam: 1.0 / lowa_rate(lam, spec, psi)
    if n is not None:
        lam = spec.zeta - math.pi + 2 * math.pi * np.arange(n) / n
        return abs(float(np.sum(f(lam)) * 2 * math.pi / n))
    val, _ = quad(f, spec.zeta - math.pi, spec.zeta + math.pi, epsabs=1e-13, epsrel=1e-13, limit=400)
    return abs(val)


@dataclass
class LowAFlow:
    T: np.ndarray
    lam: np.ndarray
    trajectory: object
    spec: object = field(repr=False)
    psi: float = 0.0

    def e3(self, T=None):
        """Leading-order rotation axis in body components."""
        lam = self.lam if T is None else self.trajectory(np.asarray(T))[..., 0]
        b = self.spec.beta
        sp, cp = math.sin(self.psi), math.cos(self.psi)
        lam = np.asarray(lam)
        return (cp * b[:, 0][None, :] + sp * (np.cos(lam)[:, None] * b[:, 1][None, :]
                                               + np.sin(lam)[:, None] * b[:, 2][None, :]))

    def crossing_times(self, level):
        """Rescaled times where ``lambda`` crosses ``level``."""
        traj = integrate(lambda t, y, _: np.atleast_1d(lowa_rate(y[0], self.spec, self.psi)),
                         self.lam[:1], (self.T[0], self.T[-1]),
                         IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12),
                         events=[Event(lambda t, y: y[0] - level)])
        return [ev.t for ev in traj.events]


def lowa_reduced_flow(spec, params, lambda0, T_span, cfg=None):
    """Integrate the reduced angle equation over rescaled time ``T_span``."""
    cfg = cfg or IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12)
    psi = params.psi
    traj = integrate(lambda t, y, _: np.atleast_1d(lowa_rate(y[0], spec, psi)),
                     [lambda0], T_span, cfg)
    return LowAFlow(traj.times, traj.states[:, 0], traj, spec, psi)


# --------------------------------------------------------------------------
# high Mason number (averaging)
# --------------------------------------------------------------------------

def guiding_g1(frame, params, model):
    """First averaged term ``-cos psi P c3``."""
    return -math.cos(params.psi) * (model.p @ frame.e3)


def guiding_g2(frame, params, model):
    """Second averaged term of the guiding system."""
    P = model.p
    c1, c2 = frame.e1, frame.e2
    pc1, pc2 = P @ c1, P @ c2
    return 0.5 * math.sin(params.psi) ** 2 * (
        P @ np.cross(c1, pc2) + P @ np.cross(pc1, c2) - np.cross(pc1, pc2))


def higha_guiding_rhs(frame, params, model, order=1):
    """Right-hand side of the guiding system in physical time.

    ``order=0`` keeps ``g1`` only; ``order=1`` adds ``(1/a) g2``.
    """
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    g = guiding_g1(frame, params, model)
    if order == 1:
        g = g + guiding_g2(frame, params, model) / params.a
    return FrameState(np.cross(g, frame.e1), np.cross(g, frame.e2), np.cross(g, frame.e3))


def frozen_average(frame, params, model, n=64):
    """Average of ``-P B*(c, T)`` over one field revolution with frozen frame.

    Trapezoidal rule on a uniform grid, exact for the trigonometric
    polynomial integrand once ``n >= 3``.
    """
    T = 2 * math.pi * np.arange(n) / n
    sp, cp = math.sin(params.psi), math.cos(params.psi)
    B = sp * (np.cos(T)[:, None] * frame.e1 + np.sin(T)[:, None] * frame.e2) + cp * frame.e3
    return -(B @ model.p.T).mean(axis=0)


@dataclass(frozen=True)
class HighAPrediction:
    """First-order large-``a`` prediction.

    ``tau_rate`` is the drift of the in-plane angle in physical time and
    ``epsilon = 1/a``.
    """

    aligned_axis: np.ndarray
    tau_rate: float
    x_offset: np.ndarray
    g2: np.ndarray
    varsigma: int
    epsilon: float
    tau0: float


def _stable_frame(spec, varsigma, tau):
    b0, b1, b2 = spec.beta0, spec.beta1, spec.beta2
    f1 = math.cos(tau) * b1 + math.sin(tau) * b2
    f2 = varsigma * (-math.sin(tau) * b1 + math.cos(tau) * b2)
    f3 = varsigma * b0
    return FrameState(f1, f2, f3)


class _PModel:
    def __init__(self, p):
        self.p = p


def higha_predict(spec, params, tau0=0.0):
    """Alignment, slow drift and mean offset for ``a >> 1``.

    Raises
    ------
    RegimeError
        At ``psi = pi/2`` where the averaged field vanishes.
    """
    cp = math.cos(params.psi)
    if abs(cp) < 1e-12:
        raise RegimeError("psi = pi/2: averaged field vanishes, sign of the aligned axis undefined")
    s12c = spec.sigma1 * spec.sigma2 * math.cos(spec.iota)
    if s12c == 0.0:
        raise RegimeError("sigma1 sigma2 cos(iota) vanishes")
    vs = params.varsigma
    f = _stable_frame(spec, vs, tau0)
    P = _p_from_spectrum(spec)
    g2 = guiding_g2(f, params, _PModel(P))
    f3 = f.e3
    x = (np.eye(3) - np.outer(f3, f3)) @ P.T @ np.cross(f3, g2) / (s12c * cp)
    rate = -vs * spec.sigma1 * spec.sigma2 * math.sin(params.psi) ** 2 / (2 * params.a * math.cos(spec.iota))
    return HighAPrediction(vs * spec.beta0, rate, x, g2, vs, 1.0 / params.a, tau0)


def higha_tau_rate_projection(spec, params, model, tau=0.0):
    """Drift rate from projecting the first-order guiding equation.

    Evaluates ``varsigma * h(f1) . f2 / a`` with the equilibrium offset
    substituted; independent of the closed form used by ``higha_predict``.
    """
    vs = params.varsigma
    f = _stable_frame(spec, vs, tau)
    pred = higha_predict(spec, params, tau)
    x = pred.x_offset
    g = -math.cos(params.psi) * (model.p @ np.cross(x, f.e3)) + guiding_g2(f, params, model)
    return vs * float(np.cross(g, f.e1) @ f.e2) / params.a


class HighAPath:
    """First-order large-``a`` frame and magnetic-frame curve as functions of time."""

    def __init__(self, spec, params, model, tau0=0.0):
        self.spec = spec
        self.params = params
        self.model = model
        self.pred = higha_predict(spec, params, tau0)

    def tau(self, t):
        return self.pred.tau0 + self.pred.tau_rate * np.asarray(t)

    def frames(self, t, first_order=True):
        """Lab frame (columns e1, e2, e3) at time ``t``."""
        f = _stable_frame(self.spec, self.pred.varsigma, float(self.tau(t)))
        if not first_order:
            return f.matrix()
        P = self.model.p
        sp = math.sin(self.params.psi)
        T = self.params.a * t
        u1 = sp * (-math.sin(T) * (P @ f.e1) + math.cos(T) * (P @ f.e2))
        v = self.pred.x_offset + u1
        F = f.matrix()
        return F + self.pred.epsilon * np.cross(v[None, :], F.T).T

    def magnetic_curve(self, times, first_order=True):
        """Predicted ``Q^T m`` at the given times."""
        m = self.model.m
        out = np.empty((len(times), 3))
        for k, t in enumerate(times):
            E = self.frames(t, first_order)
            out[k] = rot3(self.params.a * t).T @ (E.T @ m)
        return out


# --------------------------------------------------------------------------
# small conical angle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SmallPsiPrediction:
    """First-order circle of the magnetic moment in the magnetic frame.

    ``center_m0``, ``radius_r`` and ``c`` (coefficients c0..c4) are the
    closed-form expressions. ``circle_center`` and ``circle_radius`` come
    from the first-order periodic solution itself; the two agree for
    ``a`` large but differ at moderate ``a`` (see ``SmallPsiExpansion``).
    ``epsilon`` is ``sin psi``.
    """

    A: np.ndarray
    tilde_tau1: float
    tilde_tau2: float
    center_m0: np.ndarray
    radius_r: float
    c: np.ndarray
    det: float
    epsilon: float
    varsigma: int
    circle_center: np.ndarray = None
    circle_radius: float = 0.0
    expansion: object = field(default=None, repr=False, compare=False)


def _a_matrix(P, b1, b2):
    return np.array([[-(b1 @ P @ b2), b1 @ P @ b1], [-(b2 @ P @ b2), b2 @ P @ b1]])


def smallpsi_predict(model, spec, params, order=1):
    """Circle centre and radius of ``Q^T m`` to first order in ``sin psi``.

    The prediction carries a ``SmallPsiExpansion``; with ``order=2`` its
    second-order harmonics are solved as well.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    a = params.a
    eps = math.sin(params.psi)
    vs = params.varsigma
    P = model.p
    b0, b1, b2 = spec.beta0, spec.beta1, spec.beta2
    s1, s2 = spec.sigma1, spec.sigma2
    sc = s1 * s2 * math.cos(spec.iota)
    A = _a_matrix(P, b1, b2)
    A2 = A @ A
    I2 = np.eye(2)
    det = sc ** 2 + a * a * np.trace(A2) + a ** 4
    det_direct = np.linalg.det(a * a * I2 + A2)
    if not abs(det) > 1e-300:
        raise RegimeError("a^2 I + A^2 is singular")
    assert abs(det - det_direct) <= 1e-9 * max(1.0, abs(det)), (det, det_direct)

    p11, p22 = (P @ b1) @ b1, (P @ b2) @ b2
    p12, p21 = (P @ b1) @ b2, (P @ b2) @ b1
    p10, p20 = (P @ b1) @ b0, (P @ b2) @ b0
    d = p11 - p22
    s = p12 + p21
    k = -p10 ** 2 - p20 ** 2 + s1 ** 2 + s2 ** 2
    c0 = sc ** 2 * (d ** 2 + s ** 2)
    c1 = 2 * sc * (-vs * d * k - 4 * s * p10 * p20)
    c2 = -2 * sc * (d ** 2 + s ** 2) + k ** 2 + 4 * p10 ** 2 * p20 ** 2
    c3 = 2 * vs * k * d + 4 * p10 * p20 * s
    c4 = d ** 2 + s ** 2
    c = np.array([c0, c1, c2, c3, c4])
    poly = float(np.sum(c * a ** np.arange(5)))
    r = eps * a / (2 * det) * math.sqrt(max(poly, 0.0))

    PPt = P @ P.T
    m0 = np.array([
        2 * sc ** 2 - a * a * (b1 @ PPt @ b1 + b2 @ PPt @ b2),
        a * (a * a + sc) * ((b2 @ P @ b1) - (b1 @ P @ b2)),
        0.0,
    ]) * eps / (2 * det)
    m0[2] = vs

    Minv = np.linalg.inv(a * a * I2 + A2)
    pv = np.array([(P @ b2) @ b0, -((P @ b1) @ b0)])
    tt1 = (vs / a) * pv @ (-a * Minv @ A @ np.array([0.0, 1.0]) + vs * Minv @ A2 @ np.array([1.0, 0.0])) \
        - (P @ b2) @ b0 / a
    tt2 = (vs / a) * pv @ (vs * a * Minv @ A @ np.array([1.0, 0.0]) + Minv @ A2 @ np.array([0.0, 1.0])) \
        + vs * ((P @ b1) @ b0) / a

    expansion = SmallPsiExpansion(model, spec, params, order=order)
    centre, radius = expansion.first_order_circle()
    return SmallPsiPrediction(A, float(tt1), float(tt2), m0, float(r), c, float(det), eps, vs,
                              centre, float(radius), expansion)


class SmallPsiExpansion:
    """Periodic solution of the small-``sin psi`` expansion by harmonic balance.

    The lab frame is written ``e_i = W(t) e_i^0`` with
    ``W = exp(eps [v1 x] + eps^2 [v2 x])``. The first-order rotation vector
    ``v1`` is a first harmonic of the field phase; the part of ``v2``
    orthogonal to ``beta0`` is a constant plus a second harmonic. Both are
    obtained by solving small complex linear systems.
    """

    def __init__(self, model, spec, params, order=2, tau0=0.0, n_samples=32):
        self.params = params
        self.eps = math.sin(params.psi)
        self.vs = params.varsigma
        self.order = order
        self.tau0 = tau0
        P = self.P = np.asarray(model.p)
        self.m = np.asarray(model.m)
        b0, b1, b2 = self.b0, self.b1, self.b2 = spec.beta0, spec.beta1, spec.beta2
        a = params.a
        A = self.A = _a_matrix(P, b1, b2)
        Bperp = np.column_stack([b1, b2])
        # n(phi) = Re(N e^{i phi})
        N = b1 - 1j * self.vs * b2
        F1 = Bperp.T @ (P @ N)
        U = -np.linalg.solve(1j * a * np.eye(2) + A, F1)
        Uvec = Bperp @ U
        W = -(b0 @ (P @ np.cross(Uvec, b0)) + b0 @ (P @ N)) / (1j * a)
        self.V1 = Uvec + W * b0
        self.U1 = U

        if order == 2:
            phi = 2 * math.pi * np.arange(n_samples) / n_samples
            rhs = np.array([self._second_order_forcing(p) for p in phi])
            proj = rhs @ Bperp
            c0 = proj.mean(axis=0)
            c2 = 2 * (proj * np.exp(-2j * phi)[:, None]).mean(axis=0)
            self.Z0 = np.linalg.solve(A, c0)
            self.Z2 = np.linalg.solve(2j * a * np.eye(2) + A, c2)
        else:
            self.Z0 = np.zeros(2)
            self.Z2 = np.zeros(2, complex)

    def _v1(self, phi):
        return np.real(self.V1 * np.exp(1j * phi))

    def _v1dot(self, phi):
        return np.real(1j * self.params.a * self.V1 * np.exp(1j * phi))

    def _n(self, phi):
        return math.cos(phi) * self.b1 + self.vs * math.sin(phi) * self.b2

    def _second_order_forcing(self, phi):
        v, vd, b0, P = self._v1(phi), self._v1dot(phi), self.b0, self.P
        return -(0.5 * np.cross(v, vd) + 0.5 * P @ np.cross(v, np.cross(v, b0)) + P @ np.cross(v, self._n(phi)))

    def v2_perp(self, phi):
        z = self.Z0 + np.real(self.Z2 * np.exp(2j * phi))
        return z[0] * self.b1 + z[1] * self.b2

    def reference_frame(self):
        t0 = self.tau0
        e1 = math.cos(t0) * self.b1 + self.vs * math.sin(t0) * self.b2
        e2 = -math.sin(t0) * self.b1 + self.vs * math.cos(t0) * self.b2
        return np.column_stack([e1, e2, self.vs * self.b0])

    def magnetic_curve(self, times, order=None):
        """``Q^T m`` along the expanded solution at the given times."""
        order = self.order if order is None else order
        eps, b0 = self.eps, self.b0
        E0 = self.reference_frame()
        a = self.params.a
        out = np.empty((len(times), 3))
        for k, t in enumerate(np.asarray(times, dtype=float)):
            phi = a * t + self.tau0
            v1 = self._v1(phi)
            w = b0 - eps * np.cross(v1, b0)
            if order == 2:
                w = w + eps ** 2 * (-np.cross(self.v2_perp(phi), b0) + 0.5 * np.cross(v1, np.cross(v1, b0)))
            out[k] = rot3(a * t).T @ (E0.T @ w)
        return out

    def first_order_circle(self):
        """Centre (3-vector) and radius of the first-order circle.

        Writing ``-u2 + i varsigma u1 = alpha e^{i phi} + beta e^{-i phi}``
        the curve is ``alpha + beta e^{-2 i phi}`` after undoing the field
        rotation.
        """
        U = self.U1
        alpha = 0.5 * (-U[1] + 1j * self.vs * U[0])
        beta = 0.5 * (-np.conj(U[1]) + 1j * self.vs * np.conj(U[0]))
        centre = np.array([self.eps * alpha.real, self.eps * alpha.imag, float(self.vs)])
        return centre, self.eps * abs(beta)
