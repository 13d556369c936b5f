"""Command-line front end.

Exit codes: 0 success, 1 domain failure (type errors, chart exits, failed
checks, diverging flows), 2 usage or IO problems (bad arguments, unreadable
files, schema violations).
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from typing import Optional

import jsonschema
import numpy as np

from . import expression_dsl as dsl
from . import manifolds as mf
from . import variational as var
from .errors import BundleTCError, ChartExit, ParseError, UsageError
from .verify import SUITES, run_suite

TELESCOPE_ENV = "BUNDLETC_TELESCOPE"
SUITE_ALIASES = {
    "tensor_algebra": "tensor",
    "bundle_types": "bundle",
    "expression_dsl": "dsl",
    "covariant_calculus": "covariant",
}


def _named(names) -> dict:
    return {
        "type": "object",
        "properties": {"name": {"enum": sorted(names)}, "params": {"type": "object"}},
        "required": ["name"],
        "additionalProperties": False,
    }


_MANIFOLD = _named(mf.ZOO)
_LAGRANGIAN = _named(var.LAGRANGIANS)
_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_PERTURB = {
    "type": "object",
    "properties": {"amplitude": {"type": "number"}, "direction": _VEC},
    "required": ["amplitude"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "command": {"enum": ["geodesic", "harmonic", "variation"]},
        "manifold": _MANIFOLD,
        "target": _MANIFOLD,
        "domain": {
            "type": "object",
            "properties": {
                "type": {"enum": ["interval", "rectangle"]},
                "a": {"anyOf": [{"type": "number"}, _VEC]},
                "b": {"anyOf": [{"type": "number"}, _VEC]},
                "n": {"anyOf": [{"type": "integer", "minimum": 8},
                                {"type": "array", "items": {"type": "integer", "minimum": 8}}]},
                "grid": {"type": "array", "items": {"type": "integer", "minimum": 8}},
            },
            "required": ["type", "a", "b"],
            "oneOf": [{"required": ["n"]}, {"required": ["grid"]}],
            "additionalProperties": False,
        },
        "lagrangian": _LAGRANGIAN,
        "solver": {
            "type": "object",
            "properties": {
                "step": {"type": "number", "exclusiveMinimum": 0},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "steps": {"type": "integer", "minimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "minimum": 0},
                "stride": {"type": "integer", "minimum": 1},
                "record_every": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "boundary": {"enum": ["fixed", "free"]},
        "seed": {"type": "integer"},
        "initial": {
            "type": "object",
            "properties": {"x": _VEC, "v": _VEC},
            "required": ["x", "v"],
            "additionalProperties": False,
        },
        "map": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["identity", "segment", "equator", "geodesic"]},
                "x0": _VEC,
                "x1": _VEC,
                "v0": _VEC,
                "speed": {"type": "number"},
                "phase": {"type": "number"},
                "perturbation": _PERTURB,
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "variation": {"$ref": "#/$defs/variation"},
        "variation_b": {"$ref": "#/$defs/variation"},
    },
    "required": ["command"],
    "additionalProperties": False,
    "$defs": {
        "variation": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["sine", "constant", "random"]},
                "m": {"type": "integer", "minimum": 1},
                "vector": _VEC,
                "modes": {"type": "integer", "minimum": 1},
            },
            "required": ["kind"],
            "additionalProperties": False,
        }
    },
    "allOf": [
        {"if": {"properties": {"command": {"const": "geodesic"}}},
         "then": {"required": ["manifold", "initial", "solver"],
                  "properties": {"solver": {"required": ["T"]}}}},
        {"if": {"properties": {"command": {"const": "harmonic"}}},
         "then": {"required": ["manifold", "target", "domain", "map", "solver"],
                  "properties": {"solver": {"required": ["steps", "dt"]}}}},
        {"if": {"properties": {"command": {"const": "variation"}}},
         "then": {"required": ["manifold", "target", "domain", "map"]}},
    ],
}


class CliFailure(Exception):
    """Carries an exit code and the message printed to stderr."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- config handling ----------------------------------------------------------------


def _pointer(path) -> str:
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate_config(cfg) -> dict:
    """Schema check; violations become exit 2 with the JSON pointer of the offending value."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise CliFailure(2, f"config error at {_pointer(err.absolute_path)}: {err.message}")
    return cfg


def load_config(path: str, command: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise CliFailure(2, f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CliFailure(2, f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    validate_config(cfg)
    if cfg["command"] != command:
        raise CliFailure(2, f"config error at /command: expected {command!r}, found {cfg['command']!r}")
    return cfg


def _manifold(entry: dict) -> mf.RiemannianManifold:
    return mf.zoo(entry["name"], **entry.get("params", {}))


def _domain(entry: dict):
    n = entry.get("n", entry.get("grid"))
    if entry["type"] == "interval":
        if isinstance(entry["a"], list) or isinstance(entry["b"], list) or isinstance(n, list):
            raise UsageError("interval domains take scalar a, b and n")
        return var.Interval(float(entry["a"]), float(entry["b"]), int(n))
    a, b = np.atleast_1d(entry["a"]), np.atleast_1d(entry["b"])
    n = np.broadcast_to(np.atleast_1d(n), a.shape)
    if a.shape != (2,) or b.shape != (2,):
        raise UsageError("rectangle domains take two-component a and b")
    return var.Rectangle(tuple(a), tuple(b), tuple(int(k) for k in n))


def _lagrangian(cfg: dict, M, S) -> var.Lagrangian:
    entry = cfg.get("lagrangian", {"name": "kinetic"})
    return var.make_lagrangian(entry["name"], M, S, **entry.get("params", {}))


def _bounds(domain):
    if isinstance(domain, var.Interval):
        return np.array([domain.a]), np.array([domain.b])
    return np.array(domain.lo), np.array(domain.hi)


def _bump(domain):
    """``β(x) = Π sin(π(x_i − a_i)/(b_i − a_i))`` and its gradient; zero on the boundary."""
    lo, hi = _bounds(domain)
    k = np.pi / (hi - lo)

    def value(x):
        return np.prod(np.sin(k * (x - lo)), axis=-1)

    def grad(x):
        s, c = np.sin(k * (x - lo)), np.cos(k * (x - lo))
        out = np.empty_like(x)
        for i in range(x.shape[-1]):
            others = np.prod(np.delete(s, i, axis=-1), axis=-1)
            out[..., i] = k[i] * c[..., i] * others
        return out

    return value, grad


def _vector(v, dim: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise UsageError(f"{what} needs {dim} components, got {v.size}")
    return v


def build_configuration(cfg: dict, p: var.EnergyProblem, rng) -> var.FieldConfiguration:
    """Initial or given field ``φ`` described by the config's ``map`` block."""
    entry = cfg["map"]
    dom, M, S = p.domain, p.M, p.S
    lo, hi = _bounds(dom)
    kind = entry["kind"]
    if kind == "geodesic":
        if not isinstance(dom, var.Interval):
            raise UsageError("geodesic maps need an interval domain")
        if "perturbation" in entry:
            raise UsageError("geodesic maps take no perturbation")
        x0 = _vector(entry.get("x0"), S.dim, "/map/x0")
        v0 = _vector(entry.get("v0"), S.dim, "/map/v0")
        sub = 10
        h = (dom.b - dom.a) / ((dom.n - 1) * sub)
        _, xs, vs = mf.integrate_geodesic(S, x0, v0, dom.b - dom.a, h)
        return var.FieldConfiguration(dom, xs[::sub], None, vs[::sub][..., None])

    if kind == "identity":
        if S.dim != M.dim:
            raise UsageError("identity maps need equal domain and target dimensions")
        c0, J0 = np.zeros(S.dim), np.eye(S.dim)
    elif kind == "segment":
        if not isinstance(dom, var.Interval):
            raise UsageError("segment maps need an interval domain")
        x0 = _vector(entry.get("x0"), S.dim, "/map/x0")
        x1 = _vector(entry.get("x1"), S.dim, "/map/x1")
        J0 = ((x1 - x0) / (dom.b - dom.a))[:, None]
        c0 = x0 - J0[:, 0] * dom.a
    elif kind == "equator":
        if S.name != "Sphere2" or M.dim != 1:
            raise UsageError("equator maps are curves into Sphere2")
        speed = float(entry.get("speed", 1.0))
        c0, J0 = np.array([np.pi / 2, float(entry.get("phase", 0.0))]), np.array([[0.0], [speed]])
    else:  # pragma: no cover - schema enumerates kinds
        raise UsageError(kind)

    amp, d = 0.0, np.zeros(S.dim)
    if "perturbation" in entry:
        amp = float(entry["perturbation"]["amplitude"])
        d = entry["perturbation"].get("direction")
        d = rng.standard_normal(S.dim) if d is None else _vector(d, S.dim, "/map/perturbation/direction")
    beta, dbeta = _bump(dom)

    def fwd(x):
        return c0 + x @ J0.T + amp * beta(x)[..., None] * d

    def jac(x):
        return J0 + amp * d[:, None] * dbeta(x)[..., None, :]

    phi = mf.SmoothMap("phi", M, S, fwd, jac)
    return var.FieldConfiguration.from_map(dom, phi)


def build_variation(entry: Optional[dict], p: var.EnergyProblem, rng) -> var.VariationField:
    """Variation field ``A`` from a ``variation`` block; defaults to a random sine mix."""
    entry = entry or {"kind": "random"}
    lo, hi = _bounds(p.domain)
    dim = p.S.dim

    def mode(m, vec):
        k = m * np.pi / (hi - lo)
        return lambda x: np.prod(np.sin(k * (x - lo)), axis=-1)[..., None] * vec

    kind = entry["kind"]
    if kind == "sine":
        fn = mode(entry.get("m", 1), _vector(entry.get("vector", np.eye(dim)[0]), dim, "variation vector"))
    elif kind == "constant":
        vec = _vector(entry.get("vector", np.eye(dim)[0]), dim, "variation vector")
        fn = (lambda x: np.broadcast_to(vec, x.shape[:-1] + (dim,)).copy())
    else:
        parts = [mode(m, rng.standard_normal(dim) / m) for m in range(1, entry.get("modes", 3) + 1)]
        fn = (lambda x: sum(f(x) for f in parts))
    return var.VariationField.from_fn(p.domain, fn)


def _problem(cfg: dict) -> var.EnergyProblem:
    M, S = _manifold(cfg["manifold"]), _manifold(cfg["target"])
    dom = _domain(cfg["domain"])
    return var.EnergyProblem(dom, M, S, _lagrangian(cfg, M, S), cfg.get("boundary", "fixed"))


# -- output ---------------------------------------------------------------------------


def format_csv(header, rows) -> str:
    """Comma-separated, header row, 17 significant digits, ``\\n`` line endings."""
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in np.atleast_2d(np.asarray(rows, dtype=float)):
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return buf.getvalue()


def _emit(text: str, path: Optional[str]):
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliFailure(2, f"cannot write {path}: {exc.strerror or exc}") from None


# -- commands ---------------------------------------------------------------------------


def _telescope(arg: Optional[str]) -> str:
    level = arg or os.environ.get(TELESCOPE_ENV) or "mid"
    if level not in dsl.TELESCOPE_LEVELS:
        raise CliFailure(2, f"telescope level must be one of {', '.join(dsl.TELESCOPE_LEVELS)}, got {level!r}")
    return level


def cmd_typecheck(path: str, telescope: Optional[str] = None) -> int:
    level = _telescope(telescope)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliFailure(2, f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        prog = dsl.typecheck_program(text)
    except ParseError as exc:
        print(dsl.format_diagnostic(exc, path, level))
        return 1
    if prog.errors:
        for exc in prog.errors:
            print(dsl.format_diagnostic(exc, path, level))
        return 1
    for t in prog.typed:
        where = t.node.span or "1:1"
        print(f"{path}:{where}: {dsl.render(t.node)} : {dsl.bt.render_type(t.btype, level)}")
    return 0


def cmd_geodesic(cfg: dict) -> str:
    S = _manifold(cfg["manifold"])
    x0 = _vector(cfg["initial"]["x"], S.dim, "/initial/x")
    v0 = _vector(cfg["initial"]["v"], S.dim, "/initial/v")
    solver = cfg["solver"]
    g = var.solve_geodesic(S, x0, v0, float(solver["T"]), float(solver.get("step", 1e-3)), int(solver.get("stride", 1)))
    t = g.domain.points()[:, 0]
    v = g.jacobian[..., 0]
    E1 = mf.euclidean(1)
    H = var.hamiltonian(var.EnergyProblem(g.domain, E1, S, var.kinetic(E1, S)), g)
    rows = np.column_stack([t, g.values, S.norm(g.values, v), H])
    header = ["t"] + [f"x{i}" for i in range(S.dim)] + ["speed", "H"]
    return format_csv(header, rows)


def cmd_harmonic(cfg: dict) -> tuple:
    p = _problem(cfg)
    rng = np.random.default_rng(cfg.get("seed", 0))
    phi0 = build_configuration(cfg, p, rng)
    solver = cfg["solver"]
    every = int(solver.get("record_every", 1))
    res = var.gradient_flow_harmonic(p, phi0, int(solver["steps"]), float(solver["dt"]),
                                     float(solver.get("tol", 0.0)), every)
    steps = list(range(0, res.steps + 1, every))
    if len(steps) < len(res.tension_history):
        steps.append(res.steps)
    history = format_csv(["step", "tension"], np.column_stack([steps[:len(res.tension_history)],
                                                               res.tension_history]))
    x = p.domain.points().reshape(-1, p.domain.dim)
    u = res.config.values.reshape(-1, p.S.dim)
    header = [f"x{i}" for i in range(p.domain.dim)] + [f"phi{a}" for a in range(p.S.dim)]
    return history, format_csv(header, np.column_stack([x, u]))


def cmd_variation(cfg: dict) -> str:
    p = _problem(cfg)
    rng = np.random.default_rng(cfg.get("seed", 0))
    phi = build_configuration(cfg, p, rng)
    A = build_variation(cfg.get("variation"), p, rng)
    B = build_variation(cfg["variation_b"], p, rng) if "variation_b" in cfg else None
    report = var.variation_report(p, phi, A, B)
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def cmd_verify(suite: str, seed: int) -> tuple:
    name = SUITE_ALIASES.get(suite, suite)
    if name != "all" and name not in SUITES:
        choices = ", ".join(sorted(set(SUITES) | set(SUITE_ALIASES) | {"all"}))
        raise CliFailure(2, f"unknown suite {suite!r}; choose from {choices}")
    results = run_suite(name, seed)
    width = max(len(r.name) for r in results)
    lines = [f"{'suite':<12}{'check':<{width + 2}}{'error':>12}{'tol':>10}  result"]
    for r in results:
        lines.append(f"{r.suite:<12}{r.name:<{width + 2}}{r.error:>12.3e}{r.tol:>10.1e}  "
                     + ("PASS" if r.passed else "FAIL"))
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} passed (seed {seed})")
    return "\n".join(lines) + "\n", 0 if failed == 0 else 1


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bundletc", description="Typed tensor calculus on vector bundles.")
    sub = ap.add_subparsers(dest="command", required=True)

    tc = sub.add_parser("typecheck", help="typecheck a DSL file")
    tc.add_argument("file")
    tc.add_argument("--telescope", choices=dsl.TELESCOPE_LEVELS,
                    help=f"type verbosity (default ${TELESCOPE_ENV} or mid)")

    for name, what in (("geodesic", "integrate a geodesic, CSV of t, coords, speed, H"),
                       ("harmonic", "run the harmonic map heat flow, CSV output"),
                       ("variation", "first/second variation report as JSON")):
        sp = sub.add_parser(name, help=what)
        sp.add_argument("-c", "--config", required=True)
        sp.add_argument("-o", "--output", help="write here instead of stdout")
        if name == "harmonic":
            sp.add_argument("--field-output", help="write the final field CSV here (default: after the history)")

    vf = sub.add_parser("verify", help="run randomized invariant suites")
    vf.add_argument("--suite", default="all")
    vf.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    try:
        if args.command == "typecheck":
            return cmd_typecheck(args.file, args.telescope)
        if args.command == "verify":
            text, code = cmd_verify(args.suite, args.seed)
            sys.stdout.write(text)
            return code
        cfg = load_config(args.config, args.command)
        if args.command == "geodesic":
            _emit(cmd_geodesic(cfg), args.output)
        elif args.command == "harmonic":
            history, field = cmd_harmonic(cfg)
            if args.field_output:
                _emit(field, args.field_output)
                _emit(history, args.output)
            else:
                _emit(history + "\n" + field, args.output)
        else:
            _emit(cmd_variation(cfg), args.output)
        return 0
    except CliFailure as exc:
        print(f"bundletc: {exc}", file=sys.stderr)
        return exc.code
    except ChartExit as exc:
        print(f"bundletc: chart exit at t={exc.time:.17g}: {exc}", file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"bundletc: usage error: {exc}", file=sys.stderr)
        return 2
    except BundleTCError as exc:
        print(f"bundletc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
