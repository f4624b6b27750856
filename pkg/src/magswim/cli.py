"""Command-line interface: simulate, predict, sweep, continue, compare.

Every command reads an optional ``--config`` file, writes its artifacts to
``--out`` and prints a JSON summary on success. Failures print a JSON error
object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from .analysis import curve_from_points, curve_metadata, magnetic_frame_curve, write_curve_csv
from .asymptotics import HighAPath, RegimeError, higha_predict, lowa_predict, smallpsi_predict
from .config import ConfigError, RunConfig, load_config, override
from .dynamics import Parameters, pack_args, random_quaternions
from .experiments import higha_experiment, lowa_experiment, norm_deviation, smallpsi_experiment
from .integrator import IntegrationError, integrate
from .model import ModelError, compute_spectrum
from ._kernels import QUATERNION_SYSTEM
from .orbits import (
    Candidate,
    ContinuationBranch,
    DetectionError,
    OrbitError,
    PeriodicOrbit,
    SteadyState,
    continue_branch,
    default_transient,
    detect_recurrence,
    find_attractor,
    quat_distance,
    shoot_periodic,
)

log = logging.getLogger("magswim")

LOWA_REFERENCE_BOUND = 7.6922e-5


def _version():
    try:
        return version("magswim")
    except PackageNotFoundError:
        return "unknown"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return v


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


class Context:
    """Resolved configuration, model and output directory for one command."""

    def __init__(self, cfg: RunConfig, out):
        self.cfg = cfg
        self.out = out
        self.model = cfg.model()
        self.spec = compute_spectrum(self.model)
        os.makedirs(out, exist_ok=True)

    def header(self, **extra):
        lines = [f"magswim {_version()}", f"config_hash {self.cfg.digest()}",
                 f"model_hash {self.model.digest()}"]
        lines += [f"{k} {_fmt(v)}" for k, v in extra.items()]
        return lines

    def path(self, name):
        return os.path.join(self.out, name)

    def write_json(self, name, doc):
        doc = dict(doc)
        doc.setdefault("config_hash", self.cfg.digest())
        doc.setdefault("model_hash", self.model.digest())
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_table(self, name, columns, rows, **extra):
        with open(self.path(name), "w", encoding="utf-8", newline="") as fh:
            for line in self.header(**extra):
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row.get(c, "")) for c in columns])

    def single_params(self):
        a, psi = self.cfg.a_grid, self.cfg.psi_grid
        if len(a) != 1 or len(psi) != 1:
            raise ConfigError("this command takes scalar params.a and params.psi; use sweep for grids")
        return Parameters(a[0], psi[0])


def _rng(seed, cell, ic):
    return np.random.default_rng(np.random.SeedSequence([seed, cell, ic]))


def _initial_quaternions(cfg, cell=0):
    if "run.q0" in cfg.values:
        return [np.asarray(cfg.get("run.q0"), dtype=float)]
    n = cfg.get("run.n_random_ic", 1)
    return [random_quaternions(_rng(cfg.seed, cell, k), 1)[0] for k in range(n)]


def _timing(cfg, a):
    transient = cfg.get("run.transient", default_transient(a))
    horizon = cfg.get("run.horizon", transient + max(4 * 2 * math.pi / a, 200.0))
    if not horizon > transient:
        raise ConfigError(f"run.horizon ({horizon}) must exceed run.transient ({transient})")
    return transient, horizon


def _orbit_doc(orbit):
    return {
        "q0": orbit.q0, "period": orbit.period, "quaternion_symmetric": orbit.quaternion_symmetric,
        "floquet": [complex(z) for z in orbit.floquet], "stable": orbit.stable,
        "max_nontrivial_multiplier_abs": orbit.max_nontrivial_abs, "residual": orbit.residual,
        "a": orbit.params.a, "psi": orbit.params.psi,
    }


def _classify(traj, transient, model, params, tol):
    args = pack_args(params, model)
    try:
        found = detect_recurrence(traj, transient, tol=tol, velocity=lambda q: QUATERNION_SYSTEM(0.0, q, args))
    except DetectionError as exc:
        return {"classification": "undetermined", "reason": str(exc)}, None
    if isinstance(found, SteadyState):
        return {"classification": "steady", "q": found.q, "speed": found.speed}, None
    try:
        orbit = shoot_periodic(found, model, params)
    except OrbitError as exc:
        return {"classification": "periodic", "period": found.period,
                "quaternion_symmetric": found.symmetric, "shooting": f"failed: {exc}"}, None
    doc = {"classification": "periodic"}
    doc.update(_orbit_doc(orbit))
    return doc, orbit


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def cmd_simulate(ctx: Context):
    params = ctx.single_params()
    cfg = ctx.cfg
    transient, horizon = _timing(cfg, params.a)
    samples = cfg.get("run.samples", 2001)
    icfg = cfg.integrator(params.a)
    qs = _initial_quaternions(cfg)
    if not qs:
        raise ConfigError("simulate needs run.q0 or run.n_random_ic >= 1")
    results = []
    for k, q0 in enumerate(qs):
        suffix = "" if len(qs) == 1 else f"_{k:03d}"
        try:
            traj = integrate(QUATERNION_SYSTEM, q0, (0.0, horizon), icfg, args=pack_args(params, ctx.model))
        except IntegrationError as exc:
            raise IntegrationError(f"initial condition {k}: {exc}", exc.t, exc.y) from exc
        ts = np.linspace(0.0, horizon, samples)
        states = traj(ts)
        hdr = ctx.header(a=params.a, psi=params.psi, ic=k)
        with open(ctx.path(f"trajectory{suffix}.csv"), "w", encoding="utf-8") as fh:
            for line in hdr:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "q1", "q2", "q3", "q4"])
            for t, q in zip(ts, states):
                w.writerow([_fmt(t)] + [_fmt(v) for v in q])
        curve = magnetic_frame_curve(traj, ctx.model, np.linspace(transient, horizon, samples))
        with open(ctx.path(f"curve{suffix}.csv"), "w", encoding="utf-8") as fh:
            write_curve_csv(fh, curve, hdr)
        with open(ctx.path(f"curve{suffix}.json"), "w", encoding="utf-8") as fh:
            fh.write(curve_metadata(params, ctx.model.digest(), "direct integration",
                                    config_hash=cfg.digest(), transient=transient, horizon=horizon) + "\n")
        doc, orbit = _classify(traj, transient, ctx.model, params, cfg.get("run.detect_tol", 1e-3))
        doc.update(ic=k, q_initial=q0, norm_deviation=norm_deviation(traj.states), nsteps=traj.nsteps)
        ctx.write_json(f"classification{suffix}.json", doc)
        if orbit is not None:
            ctx.write_json(f"orbit{suffix}.json", _orbit_doc(orbit))
        results.append(doc)
    return {"command": "simulate", "runs": [
        {k: r[k] for k in ("ic", "classification", "period") if k in r} for r in results]}


# --------------------------------------------------------------------------
# predict
# --------------------------------------------------------------------------

def cmd_predict(ctx: Context, regime, order):
    params = ctx.single_params()
    spec, model = ctx.spec, ctx.model
    samples = ctx.cfg.get("run.samples", 2001)
    period = 2 * math.pi / params.a
    tt = np.linspace(0.0, period, samples)
    doc = {"regime": regime, "a": params.a, "psi": params.psi}
    if regime == "lowa":
        p = lowa_predict(spec, params)
        doc.update(prediction=p.regime, period_T=p.period_T, period_t=p.period_t, direction=p.direction,
                   lambda_stable=p.lambda_stable, lambda_unstable=p.lambda_unstable)
    elif regime == "higha":
        p = higha_predict(spec, params, ctx.cfg.get("predict.tau0", 0.0))
        doc.update(aligned_axis=p.aligned_axis, tau_rate=p.tau_rate, x_offset=p.x_offset, epsilon=p.epsilon,
                   varsigma=p.varsigma)
        path = HighAPath(spec, params, model, p.tau0)
        curve = curve_from_points(tt, path.magnetic_curve(tt, first_order=order >= 1))
        with open(ctx.path("predicted_curve.csv"), "w", encoding="utf-8") as fh:
            write_curve_csv(fh, curve, ctx.header(regime=regime, order=order))
    elif regime == "smallpsi":
        p = smallpsi_predict(model, spec, params, order=order)
        doc.update(A=p.A, tilde_tau1=p.tilde_tau1, tilde_tau2=p.tilde_tau2, center_m0=p.center_m0,
                   radius_r=p.radius_r, c=p.c, epsilon=p.epsilon, varsigma=p.varsigma,
                   circle_center=p.circle_center, circle_radius=p.circle_radius, order=order)
        curve = curve_from_points(tt, p.expansion.magnetic_curve(tt, order=order))
        with open(ctx.path("predicted_curve.csv"), "w", encoding="utf-8") as fh:
            write_curve_csv(fh, curve, ctx.header(regime=regime, order=order))
    else:
        raise ConfigError(f"regime must be lowa, higha or smallpsi, got {regime!r}")
    ctx.write_json("prediction.json", doc)
    return {"command": "predict", **{k: v for k, v in doc.items() if not isinstance(v, np.ndarray)}}


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

def _sweep_task(task):
    values, cell, ic, a, psi = task
    cfg = RunConfig(values)
    model = cfg.model()
    params = Parameters(a, psi)
    q0 = random_quaternions(_rng(cfg.seed, cell, ic), 1)[0]
    transient, horizon = _timing(cfg, a)
    try:
        att = find_attractor(model, params, q_init=q0, transient=transient, horizon=horizon - transient,
                             cfg=cfg.integrator(a), tol=cfg.get("run.detect_tol", 1e-3), shoot=False)
    except DetectionError:
        return {"kind": "undetermined"}
    except (IntegrationError, OrbitError, ValueError) as exc:
        return {"kind": "failed", "error": f"{type(exc).__name__}: {exc}"}
    if isinstance(att, SteadyState):
        return {"kind": "steady", "q": att.q.tolist()}
    try:
        orbit = shoot_periodic(att, model, params)
        return {"kind": "periodic", "period": orbit.period, "symmetric": orbit.quaternion_symmetric,
                "stable": orbit.stable}
    except OrbitError:
        return {"kind": "periodic", "period": att.period, "symmetric": att.symmetric, "stable": None}


def _distinct(outcomes):
    """Count attractors, identifying quaternions up to sign and periods to 1e-6."""
    steady, periods = [], []
    for o in outcomes:
        if o["kind"] == "steady":
            q = np.asarray(o["q"])
            if all(quat_distance(q, p) > 1e-4 for p in steady):
                steady.append(q)
        elif o["kind"] == "periodic":
            key = (o["period"], o["symmetric"])
            if all(abs(key[0] - p) > 1e-6 * p or key[1] != s for p, s in periods):
                periods.append(key)
    return len(steady), sorted(periods)


SWEEP_COLUMNS = ("a", "psi", "n_ic", "n_steady", "n_periodic", "n_stable_periodic", "n_undetermined",
                 "n_failed", "n_attractors", "periods", "errors")


def cmd_sweep(ctx: Context, workers=None):
    cfg = ctx.cfg
    n_ic = cfg.get("run.n_random_ic", 1)
    cells = [(a, psi) for a in cfg.a_grid for psi in cfg.psi_grid]
    tasks = [(cfg.values, c, k, a, psi) for c, (a, psi) in enumerate(cells) for k in range(n_ic)]
    workers = workers or cfg.get("run.workers", os.cpu_count() or 1)
    if tasks and workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            outcomes = list(pool.map(_sweep_task, tasks))
    else:
        outcomes = [_sweep_task(t) for t in tasks]
    rows = []
    for c, (a, psi) in enumerate(cells):
        if n_ic == 0:
            break
        outs = outcomes[c * n_ic:(c + 1) * n_ic]
        count = lambda kind: sum(o["kind"] == kind for o in outs)
        n_steady_distinct, periods = _distinct(outs)
        rows.append({
            "a": a, "psi": psi, "n_ic": n_ic,
            "n_steady": count("steady"), "n_periodic": count("periodic"),
            "n_stable_periodic": sum(o["kind"] == "periodic" and o["stable"] is not False for o in outs),
            "n_undetermined": count("undetermined"), "n_failed": count("failed"),
            "n_attractors": n_steady_distinct + len(periods),
            "periods": ";".join(f"{p:.17g}" for p, _ in periods),
            "errors": ";".join(sorted({o["error"] for o in outs if o["kind"] == "failed"})),
        })
    ctx.write_table("catalog.csv", SWEEP_COLUMNS, rows, seed=cfg.seed, n_random_ic=n_ic)
    return {"command": "sweep", "cells": len(rows), "tasks": len(tasks)}


# --------------------------------------------------------------------------
# continue
# --------------------------------------------------------------------------

def _load_orbit(path, model):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    params = Parameters(doc["a"], doc["psi"])
    cand = Candidate(np.asarray(doc["q0"], dtype=float), float(doc["period"]),
                     bool(doc["quaternion_symmetric"]), 0.0, 0.0)
    return shoot_periodic(cand, model, params)


def cmd_continue(ctx: Context, orbit_path=None, free_param=None, p_range=None):
    cfg = ctx.cfg
    orbit_path = orbit_path or cfg.get("continue.orbit")
    free_param = free_param or cfg.get("continue.free_param", "psi")
    if free_param not in ("a", "psi"):
        raise ConfigError(f"continue.free_param must be a or psi, got {free_param!r}")
    if orbit_path:
        seed = _load_orbit(orbit_path, ctx.model)
    else:
        params = ctx.single_params()
        transient, horizon = _timing(cfg, params.a)
        q0 = _initial_quaternions(cfg)[0] if ("run.q0" in cfg.values or cfg.get("run.n_random_ic", 0)) \
            else (0.0, 0.0, 0.0, 1.0)
        seed = find_attractor(ctx.model, params, q_init=q0, transient=transient, horizon=horizon - transient)
        if not isinstance(seed, PeriodicOrbit):
            raise OrbitError("seed attractor is a steady state, not a periodic orbit")
    if p_range is None:
        p_range = cfg.get("continue.range", (0.0, math.pi) if free_param == "psi" else (1e-4, 1e3))
    lo, hi = p_range
    kw = dict(ds=cfg.get("continue.ds", 0.02), ds_min=cfg.get("continue.ds_min", 1e-5),
              ds_max=cfg.get("continue.ds_max", 0.1), max_points=cfg.get("continue.max_points", 200),
              max_period=cfg.get("continue.max_period"))
    direction = cfg.get("continue.direction", 0)
    branches = []
    for d in ((-1, 1) if direction == 0 else (direction,)):
        branches.append((d, continue_branch(seed, ctx.model, free_param, (lo, hi), direction=d, **kw)))
    rows, events = [], []
    for d, br in branches:
        brows = list(br.rows())
        if d == -1 and len(branches) == 2:
            brows = brows[::-1]
        elif len(branches) == 2:
            brows = brows[1:]
        rows.extend(brows)
        events.extend({"direction": d, "kind": e.kind, "index": e.index, "a": e.params.a, "psi": e.params.psi,
                       "detail": e.detail} for e in br.events)
        events.append({"direction": d, "kind": "end", "detail": br.diagnostic})
    ctx.write_table("branch.csv", ContinuationBranch.COLUMNS, rows, free_param=free_param)
    ctx.write_json("events.json", {"free_param": free_param, "range": [lo, hi], "events": events})
    return {"command": "continue", "points": len(rows), "events": len([e for e in events if e["kind"] != "end"]),
            "diagnostics": [e["detail"] for e in events if e["kind"] == "end"]}


# --------------------------------------------------------------------------
# compare
# --------------------------------------------------------------------------

def cmd_compare(ctx: Context, regime):
    cfg, model, spec = ctx.cfg, ctx.model, ctx.spec
    rows = []
    if regime == "lowa":
        cols = ("a", "psi", "prediction", "attractor", "period_numeric", "period_predicted", "rel_error",
                "reference_bound", "within_bound")
        for a in cfg.a_grid:
            for psi in cfg.psi_grid:
                r = lowa_experiment(model, spec, Parameters(a, psi), cfg=cfg.integrator(a))
                kind = "steady" if isinstance(r.attractor, SteadyState) else "periodic"
                rows.append({"a": a, "psi": psi, "prediction": r.prediction.regime, "attractor": kind,
                             "period_numeric": getattr(r.attractor, "period", ""),
                             "period_predicted": r.prediction.period_t if r.prediction.periodic else "",
                             "rel_error": r.rel_error if r.comparable else "incomparable",
                             "reference_bound": LOWA_REFERENCE_BOUND,
                             "within_bound": "" if not r.comparable else int(r.rel_error < LOWA_REFERENCE_BOUND)})
    elif regime == "smallpsi":
        cols = ("a", "psi", "fit_center_x", "fit_center_y", "fit_center_z", "fit_radius",
                "pred_center_x", "pred_center_y", "pred_center_z", "pred_radius",
                "closed_form_center_x", "closed_form_center_y", "closed_form_radius",
                "center_error", "radius_error", "distance_order1", "distance_order2")
        for a in cfg.a_grid:
            for psi in cfg.psi_grid:
                r = smallpsi_experiment(model, spec, Parameters(a, psi), cfg=cfg.integrator(a))
                p = r.prediction
                rows.append({"a": a, "psi": psi,
                             **{f"fit_center_{c}": v for c, v in zip("xyz", r.fit.center)},
                             "fit_radius": r.fit.radius,
                             **{f"pred_center_{c}": v for c, v in zip("xyz", p.circle_center)},
                             "pred_radius": p.circle_radius,
                             "closed_form_center_x": p.center_m0[0], "closed_form_center_y": p.center_m0[1],
                             "closed_form_radius": p.radius_r,
                             "center_error": r.center_error, "radius_error": r.radius_error,
                             "distance_order1": r.distance_order1, "distance_order2": r.distance_order2})
    elif regime == "higha":
        cols = ("a", "psi", "alignment", "alignment_bound", "tau_rate_fit", "tau_rate_predicted",
                "tau_rel_error", "curve_distance")
        for a in cfg.a_grid:
            for psi in cfg.psi_grid:
                r = higha_experiment(model, spec, Parameters(a, psi), cfg=cfg.integrator(a))
                rows.append({"a": a, "psi": psi, "alignment": r.alignment, "alignment_bound": 5 / a,
                             "tau_rate_fit": r.tau_rate_fit, "tau_rate_predicted": r.prediction.tau_rate,
                             "tau_rel_error": r.tau_rel_error, "curve_distance": r.curve_distance})
    else:
        raise ConfigError(f"regime must be lowa, higha or smallpsi, got {regime!r}")
    ctx.write_table("compare.csv", cols, rows, regime=regime)
    ctx.write_json("compare.json", {"regime": regime, "rows": rows})
    return {"command": "compare", "regime": regime, "rows": len(rows)}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="magswim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                        help="override a configuration key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate and classify the attractor")
    p = sub.add_parser("predict", parents=[common], help="evaluate an asymptotic prediction")
    p.add_argument("--regime", choices=("lowa", "higha", "smallpsi"))
    p.add_argument("--order", type=int, choices=(0, 1, 2))
    p = sub.add_parser("sweep", parents=[common], help="classify attractors over a parameter grid")
    p.add_argument("--workers", type=int)
    p = sub.add_parser("continue", parents=[common], help="continue a periodic orbit branch")
    p.add_argument("--orbit", metavar="PATH", help="seed orbit JSON written by simulate")
    p.add_argument("--free-param", choices=("a", "psi"))
    p.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    p = sub.add_parser("compare", parents=[common], help="compare predictions with direct integration")
    p.add_argument("--regime", choices=("lowa", "higha", "smallpsi"))
    return parser


def run(argv=None):
    """Execute a command; returns the summary dictionary."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    cfg = override(load_config(args.config), args.set)
    if args.seed is not None:
        cfg = cfg.with_overrides(**{"run.seed": args.seed})
    ctx = Context(cfg, args.out)
    if args.command == "simulate":
        return cmd_simulate(ctx)
    if args.command == "predict":
        regime = args.regime or cfg.get("predict.regime")
        if regime is None:
            raise ConfigError("predict needs --regime or predict.regime")
        order = args.order if args.order is not None else cfg.get("predict.order", 1)
        return cmd_predict(ctx, regime, order)
    if args.command == "sweep":
        return cmd_sweep(ctx, args.workers)
    if args.command == "continue":
        return cmd_continue(ctx, args.orbit, args.free_param, args.range)
    regime = args.regime or cfg.get("compare.regime")
    if regime is None:
        raise ConfigError("compare needs --regime or compare.regime")
    return cmd_compare(ctx, regime)


EXIT_CODES = {ConfigError: 2, ModelError: 3, RegimeError: 4, IntegrationError: 5, OrbitError: 6}


def main(argv=None):
    try:
        summary = run(argv)
    except tuple(EXIT_CODES) + (OSError, ValueError) as exc:
        code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), 1)
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return code
    json.dump(_jsonable(summary), sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
