"""Scenario runner: ``kkgeom run <scenario.json> [--out DIR] [--threads N] [--emit-plot]``.

Exit codes: 0 success, 2 invalid scenario, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from . import hopf, models, tension, wong
from .errors import InputError, NumericError
from .wong import WongState, format_float

log = logging.getLogger("kkgeom")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

# ---------------------------------------------------------------------------
# schema

_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_SEED = {"type": "integer", "minimum": 0}


def _model(names, params=None):
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["name"],
        "properties": {
            "name": {"enum": list(names)},
            "params": params or {"type": "object"},
        },
    }


_STATE = {
    "type": "object",
    "additionalProperties": False,
    "oneOf": [{"required": ["x", "u", "v"]}, {"required": ["p", "pdot"]}],
    "properties": {"x": _VEC, "u": _VEC, "v": _VEC, "p": _VEC, "pdot": _VEC, "t0": {"type": "number"}},
}

_ALPHA_RANGE = {
    "oneOf": [
        {"type": "string", "pattern": r"^\s*[-+0-9.eE]+\s*:\s*[-+0-9.eE]+\s*:\s*[-+0-9.eE]+\s*$"},
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
    ]
}

_TWISTED_PARAMS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"alpha": {"type": "number"}, "alphas": {"type": "array", "items": {"type": "number"},
                                                           "minItems": 1}},
}

# "clifford" is accepted as a short name for the twisted Clifford torus family
TWISTED_NAMES = ["clifford_torus", "clifford", "twisted_s7"]

COMMAND_SCHEMAS = {
    "integrate": {
        "required": ["model", "initial", "settings"],
        "properties": {
            "model": _model(models.BUILDERS),
            "initial": {"type": "array", "items": _STATE, "minItems": 1},
            "settings": {
                "type": "object",
                "additionalProperties": False,
                "required": ["t_end"],
                "properties": {
                    "t_end": _POS,
                    "method": {"enum": ["rk4", "rk45"]},
                    "step": _POS,
                    "atol": _POS,
                    "rtol": _POS,
                    "record_every": _POS_INT,
                    "vertical_form": {"enum": list(wong.VERTICAL_FORMS)},
                    "swap_margin": _POS,
                },
            },
        },
    },
    "tension": {
        "required": ["model", "settings"],
        "properties": {
            "model": _model(TWISTED_NAMES, _TWISTED_PARAMS),
            "settings": {
                "type": "object",
                "additionalProperties": False,
                "required": ["resolution"],
                "properties": {"resolution": {"type": "integer", "minimum": 3},
                               "route": {"enum": ["chart", "ambient"]}},
            },
        },
    },
    "sweep": {
        "required": ["model", "settings"],
        "properties": {
            "model": _model(TWISTED_NAMES,
                            {"type": "object", "additionalProperties": False, "properties": {}}),
            "settings": {
                "type": "object",
                "additionalProperties": False,
                "required": ["alpha"],
                "properties": {"alpha": _ALPHA_RANGE,
                               "resolution": {"type": "integer", "minimum": 3},
                               "zero_tolerance": _POS},
            },
        },
    },
    "flow": {
        "required": ["model", "settings"],
        "properties": {
            "model": _model(["clifford_torus", "clifford"], {
                "type": "object", "additionalProperties": False,
                "properties": {"alpha": {"type": "number"}}}),
            "settings": {
                "type": "object",
                "additionalProperties": False,
                "required": ["grid", "steps"],
                "properties": {"grid": {"type": "integer", "minimum": 4},
                               "steps": _POS_INT,
                               "dt_factor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.2},
                               "amplitude": {"type": "number", "minimum": 0},
                               "record_every": _POS_INT},
            },
        },
    },
    "verify": {
        "required": ["model", "seed"],
        "properties": {
            "model": _model(["hopf_complex", "hopf_quaternionic"],
                            {"type": "object", "additionalProperties": False, "properties": {}}),
            "settings": {
                "type": "object",
                "additionalProperties": False,
                "properties": {"samples": _POS_INT},
            },
        },
    },
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command", "model"],
    "properties": {
        "command": {"enum": list(COMMAND_SCHEMAS)},
        "description": {"type": "string"},
        "model": {"type": "object"},
        "initial": {"type": "array"},
        "settings": {"type": "object"},
        "seed": _SEED,
    },
    "allOf": [
        {"if": {"properties": {"command": {"const": name}}}, "then": sub}
        for name, sub in COMMAND_SCHEMAS.items()
    ],
}


def validate(scenario: dict) -> None:
    try:
        jsonschema.validate(scenario, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"scenario invalid at {where}: {exc.message}") from None
    # sampled S^7 tensions draw random points; the seed is part of the scenario
    if scenario["command"] == "tension" and scenario["model"]["name"] == "twisted_s7" \
            and "seed" not in scenario:
        raise InputError("scenario invalid: twisted_s7 tension samples points and needs 'seed'")
    if scenario["command"] == "sweep" and scenario["model"]["name"] == "twisted_s7" \
            and "seed" not in scenario:
        raise InputError("scenario invalid: twisted_s7 sweeps sample points and need 'seed'")


# ---------------------------------------------------------------------------
# results

class Result:
    """Collected artifacts (name -> text) and summary metrics."""

    def __init__(self, command: str, model: str):
        self.command = command
        self.model = model
        self.metrics: dict = {}
        self.files: dict[str, str] = {}
        self.plots: list[str] = []

    def csv(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else format_float(c) for c in row])
        self.files[name] = buf.getvalue()

    def summary(self, status: str = "ok") -> dict:
        return {"command": self.command, "model": self.model,
                "metrics": {k: _jsonable(v) for k, v in self.metrics.items()}, "status": status}


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    return v


def _map(fn: Callable, items: list, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands

def _parse_alpha(spec) -> np.ndarray:
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    start, step, stop = (float(s) for s in spec.split(":"))
    if not step > 0 or not stop > start:
        raise InputError("alpha range must read start:step:stop with step > 0 and stop > start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 12)


def cmd_integrate(sc: dict, threads: int) -> Result:
    name = sc["model"]["name"]
    params = dict(sc["model"].get("params", {}))
    model = models.build(name, params)
    st = sc["settings"]
    method = st.get("method", "rk4")
    h = st.get("step", 1e-3)
    res = Result("integrate", name)
    is_hopf = name.startswith("hopf_")

    def one(k_state):
        k, init = k_state
        t_end = st["t_end"]
        if "p" in init:
            if not is_hopf:
                raise InputError("ambient initial data (p, pdot) needs a Hopf model")
            if method != "rk4":
                raise InputError("chart-swapping integration uses rk4")
            bundle = hopf.HopfBundle(name.split("_", 1)[1])
            p0 = np.asarray(init["p"], float)
            w0 = np.asarray(init["pdot"], float)
            tr = hopf.integrate_geodesic(bundle, p0, w0, t_end, h=h,
                                         record_every=st.get("record_every", 1),
                                         margin=st.get("swap_margin", 0.1))
            speed = float(np.linalg.norm(w0))
            gc = hopf.great_circle(p0, w0 / speed, speed * tr.t)
            err = np.linalg.norm(tr.points - bundle.project(gc), axis=1)
            kappa = -np.einsum("nba,nb->na", tr.R, tr.v)
            metrics = {"great_circle_error": float(err.max()),
                       "charge_drift": float(np.abs(kappa - kappa[0]).max()),
                       "chart_swaps": len(tr.swaps)}
            m, d = bundle.m, bundle.d
            header = (["t", "chart"] + [f"x{i + 1}" for i in range(m)] + [f"u{i + 1}" for i in range(m)]
                      + [f"v{i + 1}" for i in range(d)] + [f"P{i + 1}" for i in range(m + 1)])
            rows = [[tr.t[i], tr.chart[i], *tr.x[i], *tr.u[i], *tr.v[i], *tr.points[i]]
                    for i in range(len(tr))]
            return metrics, header, rows
        state = WongState(init.get("t0", 0.0), init["x"], init["u"], init["v"])
        traj = wong.integrate(model, state, state.t + t_end, method=method, h=h,
                              atol=st.get("atol", 1e-10), rtol=st.get("rtol", 1e-10),
                              record_every=st.get("record_every", 1),
                              vertical_form=st.get("vertical_form", "geodesic"))
        ch = wong.charges(model, traj)
        metrics = {"energy_drift": wong.energy_drift(model, traj),
                   "charge_drift": ch.drift,
                   "frame_charge_drift": ch.frame_drift,
                   "closure_error": float(np.linalg.norm(traj.x[-1] - traj.x[0])),
                   "samples": len(traj)}
        if model.m == 2:
            kg = wong.projected_curvature(model, traj)
            metrics["curvature_mean"] = float(np.mean(kg))
            metrics["curvature_spread"] = float(np.max(kg) - np.min(kg))
        rows = list(wong.trajectory_rows(model, traj))
        return metrics, wong.trajectory_header(model.m, model.d), rows

    outs = _map(one, list(enumerate(sc["initial"])), threads)
    for k, (metrics, header, rows) in enumerate(outs):
        res.csv(f"trajectory_{k}.csv", header, rows)
        for key, val in metrics.items():
            res.metrics[f"traj{k}_{key}"] = val
        res.plots.append(f"'trajectory_{k}.csv' using {3 if header[1] == 'chart' else 2}:"
                         f"{4 if header[1] == 'chart' else 3} with lines title 'trajectory {k}'")
    for key in ("energy_drift", "charge_drift", "great_circle_error"):
        vals = [m[key] for m, _, _ in outs if key in m]
        if vals:
            res.metrics[f"max_{key}"] = max(vals)
    return res


def _twisted_kind(name: str) -> str:
    return "complex" if name.startswith("clifford") else "quaternionic"


def cmd_tension(sc: dict, threads: int) -> Result:
    name = sc["model"]["name"]
    params = sc["model"].get("params", {})
    alphas = params.get("alphas", [params.get("alpha", np.pi / 4)])
    st = sc["settings"]
    route = st.get("route", "chart")
    seed = sc.get("seed", 0)
    kind = _twisted_kind(name)

    def one(a):
        rep = hopf.twisted_tension(hopf.TwistedMap(a, kind), st["resolution"], seed=seed, route=route)
        return rep.horizontal_sup, rep.vertical_sup, rep.energy

    outs = _map(one, list(alphas), threads)
    res = Result("tension", name)
    res.csv("tension.csv", ["alpha", "horizontal_residual", "vertical_residual", "energy"],
            [[a, *o] for a, o in zip(alphas, outs)])
    res.metrics["max_horizontal_residual"] = max(o[0] for o in outs)
    res.metrics["max_vertical_residual"] = max(o[1] for o in outs)
    res.metrics["route"] = route
    res.plots.append("'tension.csv' using 1:2 with linespoints title 'horizontal residual'")
    return res


def cmd_sweep(sc: dict, threads: int) -> Result:
    name = sc["model"]["name"]
    st = sc["settings"]
    alphas = _parse_alpha(st["alpha"])
    if len(alphas) < 3:
        raise InputError("a sweep needs at least three alpha values")
    kind = _twisted_kind(name)
    res_default = 16 if kind == "complex" else 64
    resolution = st.get("resolution", res_default)
    seed = sc.get("seed", 0)

    def one(a):
        tm = hopf.TwistedMap(float(a), kind)
        return hopf.charge_norm(tm, resolution, seed), hopf.charge_signed(tm, resolution, seed)

    outs = _map(one, list(alphas), threads)
    norms = np.array([o[0] for o in outs])
    signed = np.array([o[1] for o in outs])
    prof = hopf.charge_profile(kind, alphas, resolution=resolution, seed=seed,
                               zero_tol=st.get("zero_tolerance", 1e-8), precomputed=norms)
    res = Result("sweep", name)
    res.csv("sweep.csv", ["alpha", "charge_norm", "charge_signed"],
            [[a, n, s] for a, n, s in zip(alphas, norms, signed)])
    flips = [(float(alphas[i]), float(alphas[i + 1])) for i in range(len(alphas) - 1)
             if signed[i] * signed[i + 1] < 0]
    res.metrics.update({
        "zero_count": len(prof.zeros),
        "zeros": prof.zeros,
        "zero_norms": prof.zero_norms,
        "sign_changes": flips,
        "min_charge_norm": float(norms.min()),
    })
    res.plots.append("'sweep.csv' using 1:2 with lines title 'charge norm', "
                     "'sweep.csv' using 1:3 with lines title 'signed charge'")
    return res


def perturbed_clifford(n: int, alpha: float, amplitude: float) -> tension.GridMap:
    """Twisted Clifford torus on an n x n grid pushed along its unit normal."""
    grid = tension.DomainGrid.torus((n, n))
    th = grid.points()
    ca, sa = np.cos(alpha), np.sin(alpha)
    c1, s1, c2, s2 = np.cos(th[..., 0]), np.sin(th[..., 0]), np.cos(th[..., 1]), np.sin(th[..., 1])
    phi = np.stack([ca * c1, ca * s1, sa * c2, sa * s2], -1)
    normal = np.stack([-sa * c1, -sa * s1, ca * c2, ca * s2], -1)
    f = s1 * c2 + 0.5 * np.cos(2 * th[..., 0])
    p = phi + amplitude * f[..., None] * normal
    p /= np.linalg.norm(p, axis=-1, keepdims=True)
    return tension.GridMap(grid, "sphere", p)


def cmd_flow(sc: dict, threads: int) -> Result:
    st = sc["settings"]
    alpha = sc["model"].get("params", {}).get("alpha", np.pi / 4)
    gm = perturbed_clifford(st["grid"], alpha, st.get("amplitude", 0.05))
    h = gm.grid.h_min
    dt = st.get("dt_factor", 0.1) * h * h
    every = st.get("record_every", 100)
    flow = tension.heat_flow(gm, "sphere", dt, st["steps"], record_every=every)
    rep = tension.bundle_tension(flow.map.jet(), hopf.HopfBundle("complex"))
    steps = [min(i * every, st["steps"]) for i in range(len(flow.energies))]
    res = Result("flow", "clifford_torus")
    res.csv("flow.csv", ["step", "energy", "sup_tension"],
            [[s, e, t] for s, e, t in zip(steps, flow.energies, flow.sup_tension)])
    res.metrics.update({
        "dt": dt,
        "initial_energy": float(flow.energies[0]),
        "final_energy": float(flow.energies[-1]),
        "energy_monotone": bool(np.all(np.diff(flow.energies) <= 1e-12)),
        "horizontal_residual": rep.horizontal_sup,
        "vertical_residual": rep.vertical_sup,
    })
    res.plots.append("'flow.csv' using 1:2 with lines title 'energy'")
    return res


def verify_bundle(kind: str, samples: int, seed: int) -> dict:
    """Self-consistency and reference checks of one Hopf bundle at random points."""
    from .geometry import field_strength

    bundle = hopf.HopfBundle(kind)
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(samples, bundle.ambient_dim))
    p /= np.linalg.norm(p, axis=-1, keepdims=True)
    D = bundle.frame(p)
    eye = np.eye(bundle.ambient_dim - 1)
    frame_err = np.abs(np.einsum("nak,nbk->nab", D, D) - eye).max()
    table = bundle.curvature_frame(p)
    ref = hopf.REFERENCE_CURVATURE[kind]
    table_err = np.abs(table - ref).max()
    # <<V,F>H, H'> = beta(omega(V), Omega(H, H'))
    d, m = bundle.d, bundle.m
    V = np.einsum("na,nak->nk", rng.normal(size=(samples, d)), D[:, :d])
    H1 = np.einsum("nr,nrk->nk", rng.normal(size=(samples, m)), D[:, d:])
    H2 = np.einsum("nr,nrk->nk", rng.normal(size=(samples, m)), D[:, d:])
    lhs = np.einsum("nk,nk->n", bundle.lorentz_endomorphism(p, V, H1), H2)
    rhs = np.einsum("na,na->n", bundle.connection_form(p, V), bundle.curvature(p, H1, H2))
    lorentz_err = np.abs(lhs - rhs).max()
    # F of the chart model against the curvature of the section derivatives
    chart_err = 0.0
    for chart in hopf.CHARTS:
        model = bundle.as_local_model(chart)
        x = rng.normal(size=(min(samples, 50), m))
        s = bundle.section(x, chart)
        ds = np.stack([bundle.section_derivative(x, np.broadcast_to(e, x.shape), chart) for e in np.eye(m)], 1)
        Om = bundle.curvature(s[:, None, None], ds[:, :, None], ds[:, None, :], check=False)
        chart_err = max(chart_err, np.abs(field_strength(model, x) - np.moveaxis(Om, -1, 1)).max())
    proj_err = np.abs(np.linalg.norm(bundle.project(p), axis=-1) - 1).max()
    return {
        "frame_orthonormality_error": float(frame_err),
        "curvature_table_max_error": float(table_err),
        "curvature_table_max_error_opposite_sign": float(np.abs(table + ref).max()),
        "lorentz_pairing_max_error": float(lorentz_err),
        "chart_field_strength_max_error": float(chart_err),
        "projection_norm_error": float(proj_err),
    }


def cmd_verify(sc: dict, threads: int) -> Result:
    name = sc["model"]["name"]
    kind = name.split("_", 1)[1]
    samples = sc.get("settings", {}).get("samples", 1000)
    res = Result("verify", name)
    res.metrics.update(verify_bundle(kind, samples, sc["seed"]))
    bundle = hopf.HopfBundle(kind)
    p = np.zeros(bundle.ambient_dim)
    p[0] = 1.0
    table = bundle.curvature_frame(p)
    rows = []
    for b in range(bundle.d):
        for r in range(bundle.m):
            for s in range(r + 1, bundle.m):
                rows.append([b + 1, r + bundle.d + 1, s + bundle.d + 1, table[b, r, s],
                             hopf.REFERENCE_CURVATURE[kind][b, r, s]])
    res.csv("curvature.csv", ["component", "r", "s", "computed", "reference"], rows)
    return res


COMMANDS = {"integrate": cmd_integrate, "tension": cmd_tension, "sweep": cmd_sweep,
            "flow": cmd_flow, "verify": cmd_verify}


# ---------------------------------------------------------------------------
# artifacts

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _plot_script(res: Result) -> str:
    lines = ["set datafile separator ','", "set key autotitle columnhead",
             f"set title '{res.command}: {res.model}'"]
    if res.plots:
        lines.append("plot " + ", \\\n     ".join(res.plots))
    return "\n".join(lines) + "\n"


def write_artifacts(res: Result, out: Path, emit_plot: bool, status: str = "ok") -> None:
    for name in sorted(res.files):
        _atomic_write(out / name, res.files[name])
    if emit_plot:
        _atomic_write(out / "plot.gp", _plot_script(res))
    _atomic_write(out / "summary.json", json.dumps(res.summary(status), indent=2, sort_keys=True) + "\n")


def run(scenario: dict, out: Path, threads: int = 1, emit_plot: bool = False) -> int:
    try:
        validate(scenario)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    command = scenario["command"]
    try:
        res = COMMANDS[command](scenario, max(1, threads))
    except InputError as exc:
        log.error("invalid scenario: %s", exc)
        return EXIT_INPUT
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numeric failure: %s", exc)
        failed = Result(command, scenario["model"].get("name", ""))
        failed.metrics["error"] = str(exc)
        _atomic_write(out / "summary.json",
                      json.dumps(failed.summary("numeric-failure"), indent=2, sort_keys=True) + "\n")
        return EXIT_NUMERIC
    write_artifacts(res, out, emit_plot)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kkgeom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="action", required=True)
    p_run = sub.add_parser("run", help="run a JSON scenario")
    p_run.add_argument("scenario", type=Path)
    p_run.add_argument("--out", type=Path, default=None, help="output directory (default: out/<scenario name>)")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--emit-plot", action="store_true", help="also write a gnuplot script")
    p_run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        log.error("--threads must be at least 1")
        return EXIT_INPUT
    try:
        scenario = json.loads(args.scenario.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        log.error("cannot read scenario: %s", exc)
        return EXIT_INPUT
    if not isinstance(scenario, dict):
        log.error("scenario must be a JSON object")
        return EXIT_INPUT
    out = args.out if args.out is not None else Path("out") / args.scenario.stem
    return run(scenario, out, args.threads, args.emit_plot)


if __name__ == "__main__":
    sys.exit(main())
