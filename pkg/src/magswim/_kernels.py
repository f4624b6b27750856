"""Compiled right-hand sides of the built-in systems.

Every kernel has the signature ``f(t, y, args)``; ``args`` packs
``[a, psi, P (9 entries, row-major), free-parameter index]``.
``system_rhs`` dispatches on an integer id so a single cached integrator
kernel serves all systems. Ids >= VARIATIONAL add the first variational
equation with a central-difference Jacobian.
"""

import math

import numpy as np
from numba import njit

QUATERNION = 0
QUATERNION_PARAM = 1
FRAMES = 2
EB = 3
VARIATIONAL = 100

# sqrt(machine epsilon)
_SQRT_EPS = 1.4901161193847656e-08


@njit(cache=True)
def _pmul(args, x0, x1, x2):
    return (args[2] * x0 + args[3] * x1 + args[4] * x2,
            args[5] * x0 + args[6] * x1 + args[7] * x2,
            args[8] * x0 + args[9] * x1 + args[10] * x2)


@njit(cache=True)
def quaternion_rhs(t, y, args):
    a = args[0]
    sp = math.sin(args[1])
    cp = math.cos(args[1])
    q1, q2, q3, q4 = y[0], y[1], y[2], y[3]
    n2 = q1 * q1 + q2 * q2 + q3 * q3 + q4 * q4
    inv = 1.0 / n2
    # columns 0 and 2 of Q(q)
    c00 = (q1 * q1 - q2 * q2 - q3 * q3 + q4 * q4) * inv
    c10 = 2.0 * (q1 * q2 + q3 * q4) * inv
    c20 = 2.0 * (q1 * q3 - q2 * q4) * inv
    c02 = 2.0 * (q1 * q3 + q2 * q4) * inv
    c12 = 2.0 * (q2 * q3 - q1 * q4) * inv
    c22 = (-q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4) * inv
    b0 = sp * c00 + cp * c02
    b1 = sp * c10 + cp * c12
    b2 = sp * c20 + cp * c22
    pb0, pb1, pb2 = _pmul(args, b0, b1, b2)
    w0 = a * c02 - pb0
    w1 = a * c12 - pb1
    w2 = a * c22 - pb2
    k = 0.5 * (n2 - 1.0)
    out = np.empty(y.shape[0])
    out[0] = 0.5 * (q4 * w0 + q3 * w1 - q2 * w2) - k * q1
    out[1] = 0.5 * (-q3 * w0 + q4 * w1 + q1 * w2) - k * q2
    out[2] = 0.5 * (q2 * w0 - q1 * w1 + q4 * w2) - k * q3
    out[3] = 0.5 * (-q1 * w0 - q2 * w1 - q3 * w2) - k * q4
    for i in range(4, y.shape[0]):
        out[i] = 0.0
    return out


@njit(cache=True)
def quaternion_param_rhs(t, y, args):
    """Quaternion system with the free parameter appended to the state."""
    local = args.copy()
    local[int(args[11])] = y[4]
    return quaternion_rhs(t, y, local)


@njit(cache=True)
def frames_rhs(t, y, args):
    a = args[0]
    sp = math.sin(args[1])
    cp = math.cos(args[1])
    ca = math.cos(a * t)
    sa = math.sin(a * t)
    b = np.empty(3)
    for i in range(3):
        b[i] = sp * (ca * y[i] + sa * y[3 + i]) + cp * y[6 + i]
    w0, w1, w2 = _pmul(args, b[0], b[1], b[2])
    out = np.empty(9)
    for k in range(3):
        e0, e1, e2 = y[3 * k], y[3 * k + 1], y[3 * k + 2]
        out[3 * k] = -(w1 * e2 - w2 * e1)
        out[3 * k + 1] = -(w2 * e0 - w0 * e2)
        out[3 * k + 2] = -(w0 * e1 - w1 * e0)
    return out


@njit(cache=True)
def eb_rhs(t, y, args):
    a = args[0]
    e0, e1, e2 = y[0], y[1], y[2]
    b0, b1, b2 = y[3], y[4], y[5]
    w0, w1, w2 = _pmul(args, b0, b1, b2)
    out = np.empty(6)
    out[0] = -(w1 * e2 - w2 * e1)
    out[1] = -(w2 * e0 - w0 * e2)
    out[2] = -(w0 * e1 - w1 * e0)
    v0 = a * e0 - w0
    v1 = a * e1 - w1
    v2 = a * e2 - w2
    out[3] = v1 * b2 - v2 * b1
    out[4] = v2 * b0 - v0 * b2
    out[5] = v0 * b1 - v1 * b0
    return out


@njit(cache=True)
def base_rhs(sid, t, y, args):
    if sid == QUATERNION:
        return quaternion_rhs(t, y, args)
    elif sid == QUATERNION_PARAM:
        return quaternion_param_rhs(t, y, args)
    elif sid == FRAMES:
        return frames_rhs(t, y, args)
    else:
        return eb_rhs(t, y, args)


@njit(cache=True)
def variational(sid, t, Y, args):
    L = Y.shape[0]
    n = int(round((math.sqrt(1.0 + 4.0 * L) - 1.0) / 2.0))
    y = Y[:n].copy()
    f = base_rhs(sid, t, y, args)
    s = 0.0
    for i in range(n):
        s += y[i] * y[i]
    h = _SQRT_EPS * (1.0 + math.sqrt(s))
    J = np.empty((n, n))
    for j in range(n):
        yp = y.copy()
        ym = y.copy()
        yp[j] += h
        ym[j] -= h
        fp = base_rhs(sid, t, yp, args)
        fm = base_rhs(sid, t, ym, args)
        for i in range(n):
            J[i, j] = (fp[i] - fm[i]) / (2.0 * h)
    out = np.empty(L)
    out[:n] = f
    for i in range(n):
        for k in range(n):
            acc = 0.0
            for j in range(n):
                acc += J[i, j] * Y[n + j * n + k]
            out[n + i * n + k] = acc
    return out


@njit(cache=True)
def system_rhs(sid, t, y, args):
    if sid >= VARIATIONAL:
        return variational(sid - VARIATIONAL, t, y, args)
    return base_rhs(sid, t, y, args)


class CompiledSystem:
    """Handle on a built-in compiled right-hand side.

    Callable from Python like any ``rhs(t, y, args)``; the integrator
    recognises it and runs the compiled stepping loop.
    """

    def __init__(self, sid, name):
        self.sid = int(sid)
        self.name = name

    def __call__(self, t, y, args):
        return system_rhs(self.sid, float(t), np.ascontiguousarray(y, dtype=float),
                          np.ascontiguousarray(args, dtype=float))

    def variational(self):
        if self.sid >= VARIATIONAL:
            raise ValueError("already a variational system")
        return CompiledSystem(self.sid + VARIATIONAL, self.name + "+variational")

    def __repr__(self):
        return f"CompiledSystem({self.name!r})"

    def __eq__(self, other):
        return isinstance(other, CompiledSystem) and other.sid == self.sid

    def __hash__(self):
        return hash(("CompiledSystem", self.sid))


QUATERNION_SYSTEM = CompiledSystem(QUATERNION, "quaternion")
QUATERNION_PARAM_SYSTEM = CompiledSystem(QUATERNION_PARAM, "quaternion+parameter")
FRAMES_SYSTEM = CompiledSystem(FRAMES, "frames")
EB_SYSTEM = CompiledSystem(EB, "eB")
