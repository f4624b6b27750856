"""Run configuration: line-oriented ``key = value`` files with dotted sections.

Example::

    # swimmer
    swimmer.model = helix
    params.a = 0.001
    params.psi = linspace(0.1, 0.4, 4)
    integrator.rel_tol = 1e-11
    run.horizon = 20000
    run.seed = 7
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .integrator import IntegratorConfig
from .model import HELIX_MOMENT, build_model, helix_model, isotropic_model, load_drag_matrix

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "parse_grid"]


class ConfigError(ValueError):
    pass


KNOWN_KEYS = {
    "swimmer.model": str,          # helix | isotropic | file
    "swimmer.drag": str,           # path to a 6x6 drag matrix
    "swimmer.moment": "vector",
    "params.a": "grid",
    "params.psi": "grid",
    "integrator.rel_tol": float,
    "integrator.abs_tol": float,
    "integrator.max_step": float,
    "run.horizon": float,
    "run.transient": float,
    "run.seed": int,
    "run.n_random_ic": int,
    "run.q0": "vector",
    "run.detect_tol": float,
    "run.samples": int,
    "run.workers": int,
    "predict.regime": str,
    "predict.order": int,
    "predict.tau0": float,
    "continue.free_param": str,
    "continue.range": "vector",
    "continue.direction": int,
    "continue.max_points": int,
    "continue.ds": float,
    "continue.ds_min": float,
    "continue.ds_max": float,
    "continue.max_period": float,
    "continue.orbit": str,
    "compare.regime": str,
}

_GRID_FN = re.compile(r"^(linspace|logspace)\(\s*([^,]+),\s*([^,]+),\s*([^)]+)\)$")


def _number(tok, key):
    tok = tok.strip()
    if tok in ("pi", "+pi"):
        return math.pi
    try:
        return float(tok)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {tok!r} as a number") from None


def parse_grid(text, key="grid"):
    """``x``, ``x, y, z`` or ``linspace(lo, hi, n)`` / ``logspace(lo, hi, n)`` (decades)."""
    text = text.strip()
    m = _GRID_FN.match(text)
    if m:
        fn, lo, hi, n = m.groups()
        lo, hi = _number(lo, key), _number(hi, key)
        try:
            n = int(n)
        except ValueError:
            raise ConfigError(f"{key}: grid size must be an integer") from None
        if n < 1:
            raise ConfigError(f"{key}: grid must be nonempty")
        vals = np.linspace(lo, hi, n) if fn == "linspace" else np.logspace(lo, hi, n)
        return [float(v) for v in vals]
    vals = [_number(t, key) for t in re.split(r"[,\s]+", text) if t]
    if not vals:
        raise ConfigError(f"{key}: grid must be nonempty")
    return vals


def _vector(text, key):
    return [_number(t, key) for t in re.split(r"[,\s]+", text.strip()) if t]


@dataclass
class RunConfig:
    """Parsed configuration with defaults filled in."""

    values: dict = field(default_factory=dict)
    text: str = ""

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def a_grid(self):
        return self.values.get("params.a", [1.0])

    @property
    def psi_grid(self):
        return self.values.get("params.psi", [0.2])

    @property
    def seed(self):
        return self.values.get("run.seed", 0)

    def integrator(self, a):
        """Integrator settings; ``max_step`` defaults to ``min(0.1, 0.1/a)``."""
        return IntegratorConfig(
            rel_tol=self.values.get("integrator.rel_tol", 1e-11),
            abs_tol=self.values.get("integrator.abs_tol", 1e-11),
            max_step=self.values.get("integrator.max_step", min(0.1, 0.1 / a)),
        )

    def model(self):
        kind = self.values.get("swimmer.model", "file" if "swimmer.drag" in self.values else "helix")
        moment = self.values.get("swimmer.moment")
        if kind == "helix":
            if moment is None:
                return helix_model()
            from .model import bundled_drag_matrix
            return build_model(bundled_drag_matrix(), moment)
        if kind == "isotropic":
            return isotropic_model(moment if moment is not None else (0.0, 0.0, 1.0))
        if kind == "file":
            path = self.values.get("swimmer.drag")
            if path is None:
                raise ConfigError("swimmer.model = file requires swimmer.drag")
            return build_model(load_drag_matrix(path), moment if moment is not None else HELIX_MOMENT)
        raise ConfigError(f"swimmer.model must be helix, isotropic or file, got {kind!r}")

    def canonical(self):
        """Sorted ``key = value`` text, the input to ``digest``."""
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, (list, tuple)):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def with_overrides(self, **kv):
        vals = dict(self.values)
        for k, v in kv.items():
            if v is not None:
                vals[k] = v
        cfg = RunConfig(vals, self.text)
        cfg.validate()
        return cfg

    def validate(self):
        v = self.values
        for key in ("params.a", "params.psi"):
            if key in v and not v[key]:
                raise ConfigError(f"{key}: grid must be nonempty")
        for a in v.get("params.a", []):
            if not a > 0:
                raise ConfigError(f"params.a: Mason number must be positive, got {a}")
        for psi in v.get("params.psi", []):
            if not 0 <= psi <= math.pi:
                raise ConfigError(f"params.psi: conical angle must lie in [0, pi], got {psi}")
        transient = v.get("run.transient")
        horizon = v.get("run.horizon")
        if transient is not None and transient < 0:
            raise ConfigError("run.transient must be nonnegative")
        if horizon is not None and transient is not None and not horizon > transient:
            raise ConfigError(f"run.horizon ({horizon}) must exceed run.transient ({transient})")
        if v.get("run.n_random_ic", 0) < 0:
            raise ConfigError("run.n_random_ic must be nonnegative")
        if "run.q0" in v and len(v["run.q0"]) != 4:
            raise ConfigError("run.q0 must have 4 components")
        if "swimmer.moment" in v and len(v["swimmer.moment"]) != 3:
            raise ConfigError("swimmer.moment must have 3 components")
        if "continue.range" in v and len(v["continue.range"]) != 2:
            raise ConfigError("continue.range must have 2 components")
        try:
            if "integrator.rel_tol" in v or "integrator.abs_tol" in v:
                self.integrator(1.0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


def _convert(key, raw):
    kind = KNOWN_KEYS[key]
    if kind == "grid":
        return parse_grid(raw, key)
    if kind == "vector":
        return _vector(raw, key)
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if kind is float:
        return _number(raw, key)
    return raw.strip()


def parse_config(text):
    """Parse configuration text.

    Raises
    ------
    ConfigError
        On malformed lines, unknown keys or invalid values.
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return RunConfig(values, text).validate()


def load_config(path):
    if path is None:
        return RunConfig({}, "")
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def override(cfg, pairs):
    """Apply ``key=value`` strings from the command line."""
    vals = dict(cfg.values)
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        k, raw = (s.strip() for s in pair.split("=", 1))
        if k not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {k!r}")
        vals[k] = _convert(k, raw)
    return RunConfig(vals, cfg.text).validate()
