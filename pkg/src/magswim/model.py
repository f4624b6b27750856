"""Swimmer model: drag/mobility data and the singular structure of ``P = M22 [m x]``."""

from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

__all__ = [
    "ModelError",
    "DragMatrix",
    "SwimmerModel",
    "PSpectrum",
    "cross_matrix",
    "load_drag_matrix",
    "bundled_drag_matrix",
    "build_model",
    "isotropic_model",
    "helix_model",
    "compute_spectrum",
    "HELIX_MOMENT",
    "SIGN_CONVENTION",
]

HELIX_MOMENT = np.array([0.0, 0.1736, 0.9848])

# sigma_2 below this fraction of sigma_1 is treated as rank deficient
DEGENERACY_RTOL = 1e-8

SIGN_CONVENTION = (
    "beta1: largest-magnitude component positive; beta2 = beta0 x beta1; "
    "eta_i = P beta_i / sigma_i"
)


class ModelError(ValueError):
    """Invalid drag matrix, magnetic moment or degenerate swimmer."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def cross_matrix(v):
    """Return the matrix ``[v x]`` such that ``cross_matrix(v) @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class DragMatrix:
    """6x6 drag matrix as read from file.

    ``asymmetry`` is ``max|D - D^T|``, kept for diagnostics since tabulated
    drag matrices are rarely symmetric to the last digit.
    """

    entries: np.ndarray
    asymmetry: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(self.entries))

    def mobility(self):
        """Symmetrized inverse ``0.5 D^-1 + 0.5 D^-T``."""
        try:
            inv = np.linalg.inv(self.entries)
        except np.linalg.LinAlgError as exc:
            raise ModelError("drag matrix is singular") from exc
        if not np.all(np.isfinite(inv)):
            raise ModelError("drag matrix is singular")
        return 0.5 * (inv + inv.T)


@dataclass(frozen=True)
class SwimmerModel:
    mobility: np.ndarray
    m22: np.ndarray
    m: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name in ("mobility", "m22", "m", "p"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def digest(self):
        """Short hash identifying the model in output headers."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.m22).tobytes())
        h.update(np.ascontiguousarray(self.m).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class PSpectrum:
    """Singular structure of P.

    ``beta`` and ``eta`` are 3x3 matrices whose *columns* are the right and
    left singular vectors, index 0 pairing with the zero singular value.
    """

    sigma1: float
    sigma2: float
    beta: np.ndarray
    eta: np.ndarray
    iota: float
    zeta: float
    convention: str = field(default=SIGN_CONVENTION)

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(self.beta))
        object.__setattr__(self, "eta", _frozen(self.eta))

    @property
    def sigmas(self):
        return np.array([0.0, self.sigma1, self.sigma2])

    @property
    def beta0(self):
        return self.beta[:, 0]

    @property
    def beta1(self):
        return self.beta[:, 1]

    @property
    def beta2(self):
        return self.beta[:, 2]

    @property
    def eta0(self):
        return self.eta[:, 0]

    @property
    def eta1(self):
        return self.eta[:, 1]

    @property
    def eta2(self):
        return self.eta[:, 2]


def _read_text(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    elif isinstance(source, io.TextIOBase):
        return source.read()
    else:
        raw = source.read()
    if isinstance(raw, str):
        return raw
    return raw.decode("utf-8")


def load_drag_matrix(source):
    """Parse a 6x6 drag matrix.

    Parameters
    ----------
    source : path, bytes or file object
        Plain text, 36 whitespace-separated numbers in row-major order.
        Lines starting with ``#`` are ignored.

    Returns
    -------
    DragMatrix

    Raises
    ------
    ModelError
        On parse failure, a singular matrix, or a symmetrized mobility that
        is not positive definite.
    """
    text = _read_text(source)
    values = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise ModelError(f"line {lineno}: cannot parse {tok!r} as a number") from None
    if len(values) != 36:
        raise ModelError(f"expected 36 numbers, found {len(values)}")
    d = np.array(values).reshape(6, 6)
    if not np.all(np.isfinite(d)):
        raise ModelError("drag matrix has non-finite entries")
    drag = DragMatrix(d, float(np.max(np.abs(d - d.T))))
    mob = drag.mobility()
    if np.linalg.eigvalsh(mob).min() <= 0.0:
        raise ModelError("symmetrized mobility is not positive definite")
    return drag


def bundled_drag_matrix():
    """Drag matrix of the example helical swimmer shipped with the package."""
    ref = resources.files("magswim").joinpath("data/helix_drag.txt")
    return load_drag_matrix(ref.read_bytes())


def build_model(drag, m):
    """Assemble the swimmer model from a drag matrix and a magnetic moment.

    The moment is normalized; ``p = m22 @ [m x]``.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3,):
        raise ModelError("magnetic moment must be a 3-vector")
    norm = np.linalg.norm(m)
    if not norm > 0.0:
        raise ModelError("magnetic moment must be nonzero")
    m = m / norm
    mob = drag.mobility()
    m22 = mob[3:, 3:]
    if np.linalg.eigvalsh(m22).min() <= 0.0:
        raise ModelError("rotational mobility block is not positive definite")
    return SwimmerModel(mob, m22, m, m22 @ cross_matrix(m))


def _from_m22(m22, m):
    mob = np.eye(6)
    mob[3:, 3:] = m22
    m = np.asarray(m, dtype=float)
    m = m / np.linalg.norm(m)
    return SwimmerModel(mob, m22, m, np.asarray(m22) @ cross_matrix(m))


def isotropic_model(m=(0.0, 0.0, 1.0)):
    """Model with unit rotational mobility, so ``P = [m x]``."""
    return _from_m22(np.eye(3), m)


def helix_model():
    """The example helical swimmer with its tabulated magnetic moment."""
    return build_model(bundled_drag_matrix(), HELIX_MOMENT)


def compute_spectrum(model):
    """Singular value decomposition of P with the sign conventions fixed.

    Raises
    ------
    ModelError
        If P has rank below two.
    """
    p = model.p
    beta0 = model.m
    _, s, vt = np.linalg.svd(p)
    sigma1, sigma2 = float(s[0]), float(s[1])
    if not sigma2 > DEGENERACY_RTOL * sigma1:
        raise ModelError(f"degenerate swimmer: sigma2 = {sigma2:.3e}, sigma1 = {sigma1:.3e}")

    # project out m to kill round-off in the null direction
    beta1 = vt[0] - (vt[0] @ beta0) * beta0
    beta1 /= np.linalg.norm(beta1)
    if beta1[np.argmax(np.abs(beta1))] < 0:
        beta1 = -beta1
    beta2 = np.cross(beta0, beta1)
    sigma1 = float(np.linalg.norm(p @ beta1))
    sigma2 = float(np.linalg.norm(p @ beta2))

    eta0 = np.linalg.solve(model.m22, beta0)
    eta0 /= np.linalg.norm(eta0)
    eta1 = p @ beta1 / sigma1
    eta2 = p @ beta2 / sigma2

    beta = np.column_stack([beta0, beta1, beta2])
    eta = np.column_stack([eta0, eta1, eta2])
    iota = float(np.arccos(np.clip(beta0 @ eta0, -1.0, 1.0)))
    zeta = float(np.arctan2(eta0 @ beta1, -(eta0 @ beta2)) % (2 * np.pi))
    return PSpectrum(sigma1, sigma2, beta, eta, iota, zeta)
