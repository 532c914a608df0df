"""Config-driven experiment runner.

Every subcommand reads a YAML config with three blocks::

    problem:  d, N, L, nfunction, operator, F
    numerics: K, xi, tol, max_iter, delta_schedule, eps, nodes_per_cell, n, ...
    output:   dir

fills omitted numerics with defaults, echoes the resolved config into the
output directory and writes columnar result tables plus ``summary.json``.
Result files carry no timestamps, so reruns are byte-identical.

Exit status: 0 on success (including failed verdicts of sampled checks),
1 on solver or range errors, 2 on config errors.
"""

from __future__ import annotations

import argparse
import copy
import sys
from pathlib import Path

import numpy as np
import yaml

from . import io as _io

COMMANDS = ("conjugate", "check-conditions", "cell", "effective", "homogenize", "converge")

DEFAULTS = {
    "problem": {"d": 1, "N": 1, "L": 1.0, "nfunction": None, "operator": None, "F": 1.0},
    "numerics": {
        "K": None,                 # cell grid size (1024 in 1D, 64 in 2D)
        "xi": None,                # line: {min, max, n} or list; polar: {radii, n_angles}
        "tol": None,               # solver residual tolerance
        "max_iter": 100,
        "delta_schedule": [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
        "eps": [0.25, 0.125, 0.0625],
        "nodes_per_cell": 16,
        "n": None,                 # box grid intervals; default nodes_per_cell / min(eps)
        "eta": None,               # dual sample points for f*
        "grid": {"radius": 1e3, "t_min": 1e-6, "per_decade": 400, "n_linear": 4000},
        "dual": None,              # dual radius of conjugate tables
        "checks": ["delta2", "m2", "m4", "m3", "radial"],
        "check_y": None,           # y sample for 1D slices (default origin)
        "corrector": "cells",      # "cells" or "none"
        "refine_check": True,
    },
    "output": {"dir": "results"},
}


class ConfigError(ValueError):
    """Config problem, optionally anchored to a line of the source file."""

    def __init__(self, message, line=None, source="config"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


def _compose(node, lines, path=()):
    """Convert a YAML node tree to Python objects while recording key line numbers."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = yaml.safe_load(yaml.serialize(k))
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1)
            lines[path + (key,)] = k.start_mark.line + 1
            out[key] = _compose(v, lines, path + (key,))
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_compose(v, lines, path + (i,)) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def parse_config(text, source="config"):
    """Parse YAML text into ``(config, line_map)`` without applying defaults."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        msg = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"invalid YAML: {msg}", line, source) from None
    lines = {}
    if node is None:
        return {}, lines
    try:
        cfg = _compose(node, lines)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[1], exc.line, source) from None
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be a mapping", lines.get(()), source)
    return cfg, lines


def resolve_config(cfg, lines=None, source="config", tol=None):
    """Validate the schema and fill defaults."""
    lines = lines or {}

    def err(msg, path):
        line = None
        for k in range(len(path), -1, -1):
            if path[:k] in lines:
                line = lines[path[:k]]
                break
        return ConfigError(msg, line, source)

    out = copy.deepcopy(DEFAULTS)
    for block, val in cfg.items():
        if block not in DEFAULTS:
            raise err(f"unknown block {block!r} (expected one of {sorted(DEFAULTS)})", (block,))
        if not isinstance(val, dict):
            raise err(f"block {block!r} must be a mapping", (block,))
        for key, v in val.items():
            if key not in DEFAULTS[block]:
                raise err(f"unknown key {key!r} in block {block!r}", (block, key))
            if key == "grid":
                if not isinstance(v, dict):
                    raise err("numerics.grid must be a mapping", (block, key))
                unknown = sorted(set(v) - set(DEFAULTS[block][key]))
                if unknown:
                    raise err(f"unknown keys {unknown} in numerics.grid", (block, key))
                out[block][key].update(v)
            else:
                out[block][key] = v
    p, num = out["problem"], out["numerics"]
    for key in ("d", "N"):
        if not isinstance(p[key], int) or p[key] not in (1, 2):
            raise err(f"problem.{key} must be 1 or 2", ("problem", key))
    for key in ("L",):
        if not isinstance(p[key], (int, float)) or p[key] <= 0:
            raise err(f"problem.{key} must be a positive number", ("problem", key))
    for key in ("max_iter", "nodes_per_cell"):
        if not isinstance(num[key], int) or num[key] <= 0:
            raise err(f"numerics.{key} must be a positive integer", ("numerics", key))
    if num["K"] is None:
        num["K"] = 1024 if p["d"] == 1 else 64
    if not isinstance(num["K"], int) or num["K"] < 2:
        raise err("numerics.K must be an integer >= 2", ("numerics", "K"))
    if tol is not None:
        num["tol"] = float(tol)
    if num["tol"] is None:
        num["tol"] = 1e-10 if p["d"] == 1 else 1e-8
    try:
        num["tol"] = float(num["tol"])
        num["delta_schedule"] = [float(x) for x in num["delta_schedule"]]
        num["eps"] = [float(x) for x in num["eps"]]
    except (TypeError, ValueError):
        raise err("numerics.tol, delta_schedule and eps must be numbers", ("numerics",)) from None
    if num["tol"] <= 0 or any(e <= 0 for e in num["eps"]):
        raise err("tolerances and periods must be positive", ("numerics",))
    if num["xi"] is None:
        num["xi"] = ({"min": -2.0, "max": 2.0, "n": 21} if p["d"] * p["N"] == 1
                     else {"radii": [0.5, 1.0, 1.5, 2.0], "n_angles": 16})
    if num["n"] is None and num["eps"]:
        num["n"] = int(round(num["nodes_per_cell"] * p["L"] / min(num["eps"])))
    for key in ("nfunction", "operator"):
        if p[key] is not None and not isinstance(p[key], dict):
            raise err(f"problem.{key} must be a mapping with a 'family' key", ("problem", key))
    out["_lines"] = lines
    return out


def load_config(path, tol=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    cfg, lines = parse_config(text, str(path))
    return resolve_config(cfg, lines, str(path), tol)


# ---------------------------------------------------------------------------
# builders


def _line(cfg, *path):
    return cfg.get("_lines", {}).get(path)


def _need(cfg, key):
    val = cfg["problem"][key]
    if val is None:
        raise ConfigError(f"this command needs problem.{key}", None)
    return val


def _build(cfg, key, maker):
    try:
        return maker(_need(cfg, key))
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad problem.{key}: {exc}", _line(cfg, "problem", key)) from None


def _nfunction(cfg):
    from .nfunction import make_nfunction
    return _build(cfg, "nfunction", make_nfunction)


def _operator(cfg):
    from .operator import gradient_operator, make_operator
    if cfg["problem"]["operator"] is None and cfg["problem"]["nfunction"] is not None:
        return gradient_operator(_nfunction(cfg), "gradient", {
            "family": "gradient", "nfunction": cfg["problem"]["nfunction"]})
    return _build(cfg, "operator", make_operator)


def _solver_config(cfg):
    from .solver import SolverConfig
    num = cfg["numerics"]
    return SolverConfig(tol=num["tol"], max_iter=num["max_iter"],
                        delta_schedule=tuple(num["delta_schedule"]),
                        continuation=bool(num["delta_schedule"]))


def _xi_nodes(cfg):
    spec = cfg["numerics"]["xi"]
    m = cfg["problem"]["d"] * cfg["problem"]["N"]
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if isinstance(spec, dict) and "radii" in spec:
        if m != 2:
            raise ConfigError("polar xi grids need d * N = 2", _line(cfg, "numerics", "xi"))
        radii = spec["radii"]
        if isinstance(radii, dict):
            radii = np.linspace(0.0, float(radii["max"]), int(radii["n"]))
        return {"radii": [float(r) for r in radii], "n_angles": int(spec.get("n_angles", 16))}
    if isinstance(spec, dict) and {"min", "max", "n"} <= set(spec):
        return np.linspace(float(spec["min"]), float(spec["max"]), int(spec["n"]))
    raise ConfigError("numerics.xi must be a list, {min, max, n} or {radii, n_angles}",
                      _line(cfg, "numerics", "xi"))


def make_load(spec, d, N):
    """Build the load ``F(x)`` from its config.

    Accepted forms: a number or list (constant), ``{kind: linear, scale}``
    (``F = scale * x`` in every component), ``{kind: sin, amplitude,
    frequency}`` (``F = amplitude * sin(2 pi frequency x)``) and
    ``{kind: constant, value}``.
    """
    m = d * N
    if isinstance(spec, (int, float, list)):
        val = np.broadcast_to(np.asarray(spec, dtype=float).reshape(-1), (m,)).copy()
        return lambda x: np.broadcast_to(val, (x.shape[0], m))
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("F must be a number, a list or a mapping with a 'kind' key")
    kind = spec["kind"]
    if kind == "constant":
        return make_load(spec.get("value", 0.0), d, N)
    if kind == "linear":
        s = float(spec.get("scale", 1.0))
        return lambda x: np.repeat(s * x, N, axis=1).reshape(x.shape[0], m)
    if kind == "sin":
        a = float(spec.get("amplitude", 1.0))
        f = float(spec.get("frequency", 1.0))
        return lambda x: np.repeat(a * np.sin(2 * np.pi * f * x), N, axis=1).reshape(x.shape[0], m)
    raise ValueError(f"unknown load kind {kind!r}")


def _load(cfg):
    p = cfg["problem"]
    try:
        return make_load(p["F"], p["d"], p["N"])
    except ValueError as exc:
        raise ConfigError(str(exc), _line(cfg, "problem", "F")) from None


def _y0(cfg):
    y = cfg["numerics"]["check_y"]
    d = cfg["problem"]["d"]
    return np.zeros(d) if y is None else np.broadcast_to(np.asarray(y, dtype=float), (d,))


# ---------------------------------------------------------------------------
# subcommands


def cmd_conjugate(cfg, out, workers=1):
    """Tabulate the radial slice of ``M`` at ``check_y``, its conjugate and biconjugate."""
    from .nfunction import TabulatedConvexFunction, biconjugate, conjugate, log_linear_grid
    M = _nfunction(cfg)
    num = cfg["numerics"]
    y0 = _y0(cfg)
    g = num["grid"]
    x = log_linear_grid(float(g["radius"]), float(g["t_min"]), int(g["per_decade"]),
                        int(g["n_linear"]))
    table = TabulatedConvexFunction((x,), M.profile(np.broadcast_to(y0, x.shape + y0.shape), x),
                                    even=True, meta={"nfunction": M.name})
    star = conjugate(table, dual=num["dual"], strict=False)
    s = star.axes[0]
    ys = np.broadcast_to(y0, s.shape + y0.shape)
    eta = np.zeros(s.shape + (cfg["problem"]["d"] * cfg["problem"]["N"],))
    eta[:, 0] = s
    exact = M.conj(ys, eta)
    # compare away from the top of the slope range, where the finite primal range clips
    top = np.max(np.diff(table.values) / np.diff(x))
    interior = s <= 0.5 * top
    err = np.abs(star.values - exact)[interior]
    rel = err / np.maximum(1.0, np.abs(exact[interior]))
    bi = biconjugate(table)
    table.save(out / "primal.txt", "M")
    _io.write_table(out / "conjugate.txt", {"s": s, "conjugate": star.values,
                                            "pointwise": exact},
                    {"kind": "conjugate", "nfunction": M.name})
    bi.save(out / "biconjugate.txt", "biconjugate")
    return {"n_primal": len(x), "n_dual": len(s),
            "max_rel_error_interior": float(rel.max()) if rel.size else 0.0,
            "biconjugate_max_rel_change": float(np.max(np.abs(bi.values - table.values)
                                                       / np.maximum(1.0, np.abs(table.values))))}


def cmd_check_conditions(cfg, out, workers=1):
    from . import conditions as C
    M = _nfunction(cfg)
    d = cfg["problem"]["d"]
    m = d * cfg["problem"]["N"]
    reports = {}
    checks = cfg["numerics"]["checks"]
    known = {"delta2", "m2", "m3", "m4", "radial"}
    bad = [c for c in checks if c not in known]
    if bad:
        raise ConfigError(f"unknown checks {bad}", _line(cfg, "numerics", "checks"))
    if "delta2" in checks:
        reports["delta2"] = C.check_delta2(M, d, m)
    if "m2" in checks:
        reports["m2"] = C.check_m2_sandwich(M, d, m)
    if "m4" in checks:
        reports["m4"] = C.check_m4_log_holder(M, d, m)
    if "m3" in checks:
        reports["m3"] = C.check_m3_cube_condition(M, d=d, m=m)
    if "radial" in checks:
        reports["radial"] = C.radial_reduction_check(M, d=d)
    out_d = {k: r.to_dict() for k, r in reports.items()}
    _io.write_json(out / "conditions.json", out_d)
    return {k: bool(r.passes) for k, r in reports.items()}


def cmd_cell(cfg, out, workers=1):
    from .cell import solve_cell
    from .pgrid import PeriodicGrid
    from .solver import ConvergenceError
    op = _operator(cfg)
    p = cfg["problem"]
    grid = PeriodicGrid(p["d"], cfg["numerics"]["K"])
    xi = _xi_nodes(cfg)
    if isinstance(xi, dict):
        from .cell import polar_nodes
        xi = polar_nodes(np.asarray(xi["radii"]), xi["n_angles"])
    xi = np.asarray(xi, dtype=float).reshape(len(xi), -1)
    sc = _solver_config(cfg)
    rows = []
    for k, x in enumerate(xi):
        try:
            sol = solve_cell(op, x, grid, sc, p["N"])
        except ConvergenceError as exc:
            rows.append((x, np.full(x.shape, np.nan), np.nan, exc.best_residual, 0, "failed"))
            continue
        sol.save(out / f"corrector_{k:03d}.txt", grid)
        rows.append((x, sol.hat_A, np.nan if sol.energy is None else sol.energy,
                     sol.residual, sol.iterations, sol.strategy))
    m = xi.shape[1]
    cols = {f"xi{j + 1}": np.array([r[0][j] for r in rows]) for j in range(m)}
    cols.update({f"A{j + 1}": np.array([r[1][j] for r in rows]) for j in range(m)})
    cols["energy"] = np.array([r[2] for r in rows])
    cols["residual"] = np.array([r[3] for r in rows])
    cols["iterations"] = np.array([r[4] for r in rows])
    _io.write_table(out / "cells.txt", cols, {"kind": "cell_solutions", "operator": op.name,
                                              "strategies": [r[5] for r in rows]})
    failed = sum(r[5] == "failed" for r in rows)
    return {"n_cells": len(rows), "failed": failed,
            "max_residual": float(np.nanmax(cols["residual"]))}


def cmd_effective(cfg, out, workers=1):
    from .cell import effective_operator_table, effective_potential, verify_hatA_properties
    from .pgrid import PeriodicGrid
    op = _operator(cfg)
    p = cfg["problem"]
    num = cfg["numerics"]
    grid = PeriodicGrid(p["d"], num["K"])
    sc = _solver_config(cfg)
    xi = _xi_nodes(cfg)
    summary = {}
    if op.is_gradient and not isinstance(xi, dict):
        eta = None if num["eta"] is None else np.asarray(num["eta"], dtype=float)
        pot = effective_potential(op, xi, grid, sc, eta=eta, N=p["N"], workers=workers)
        table = pot.table
        pot.save(out / "f.txt", out / "fstar.txt")
        summary["fstar_max_rel_gap"] = float(np.max(pot.rel_gap))
        summary["fstar_flagged"] = len(pot.flagged)
        if num["refine_check"] and table.layout == "line":
            rep = verify_hatA_properties(op, table, pot, grid=grid, config=sc)
            _io.write_json(out / "hatA_properties.json", rep.to_dict())
            summary["hatA_properties_pass"] = bool(rep.passes)
    else:
        table = effective_operator_table(op, xi, grid, sc, p["N"], workers)
    table.save(out / "hatA.txt")
    summary.update({"layout": table.layout, "n_nodes": len(table.nodes),
                    "failed_nodes": len(table.failures),
                    "max_residual": float(np.max(table.residual))})
    return summary


def _homogenized_source(cfg, op, workers):
    from .cell import effective_operator_table
    from .pgrid import PeriodicGrid
    p = cfg["problem"]
    grid = PeriodicGrid(p["d"], cfg["numerics"]["K"])
    sc = _solver_config(cfg)
    table = effective_operator_table(op, _xi_nodes(cfg), grid, sc, p["N"], workers)
    if table.failures:
        raise RuntimeError(f"{len(table.failures)} cell solves failed; see hatA.txt")
    return table, (op, grid, sc)


def _box(cfg):
    from .pgrid import BoxGrid
    p = cfg["problem"]
    n = cfg["numerics"]["n"]
    if n is None:
        raise ConfigError("numerics.n or numerics.eps is required", None)
    return BoxGrid(p["d"], int(n), float(p["L"]))


def cmd_homogenize(cfg, out, workers=1):
    from .dirichlet import solve_eps_problem, solve_homogenized
    op = _operator(cfg)
    p = cfg["problem"]
    table, ext = _homogenized_source(cfg, op, workers)
    table.save(out / "hatA.txt")
    grid = _box(cfg)
    F = _load(cfg)
    sc = _solver_config(cfg)
    hom = solve_homogenized(table, F, grid, sc, p["N"], gauge=op.gauge, extend=ext)
    hom.save(out / "u_homogenized.txt", grid)
    rows = []
    for k, eps in enumerate(sorted(cfg["numerics"]["eps"], reverse=True)):
        sol = solve_eps_problem(op, eps, F, grid, sc, p["N"],
                                min_nodes_per_cell=cfg["numerics"]["nodes_per_cell"])
        sol.save(out / f"u_eps_{k:02d}.txt", grid)
        rows.append(sol.summary())
    cols = {key: np.array([r[key] for r in rows], dtype=float)
            for key in ("eps", "energy", "load_energy", "energy_identity_gap", "residual",
                        "iterations", "max_abs_u")}
    _io.write_table(out / "solutions.txt", cols, {"kind": "dirichlet_runs"})
    return {"homogenized": hom.summary(), "n_eps": len(rows)}


def cmd_converge(cfg, out, workers=1):
    from .dirichlet import convergence_study
    op = _operator(cfg)
    p = cfg["problem"]
    table, _ = _homogenized_source(cfg, op, workers)
    table.save(out / "hatA.txt")
    grid = _box(cfg)
    sc = _solver_config(cfg)
    diag = cfg["numerics"]["corrector"] != "none"
    rep = convergence_study(op, table, _load(cfg), cfg["numerics"]["eps"], grid, sc, p["N"],
                            cell_config=sc, diagnostics=diag)
    rep.save(out / "convergence.txt")
    d = rep.to_dict()
    summary = {k: d[k] for k in ("uniform_bound_variation", "l1_errors_decrease") if k in d}
    summary.update({"eps": [r["eps"] for r in rep.rows],
                    "status": [r["status"] for r in rep.rows],
                    "l1_errors": [r["l1_error"] for r in rep.rows],
                    "energy_gaps": [r.get("energy_gap", float("nan")) for r in rep.rows]})
    return summary


HANDLERS = {"conjugate": cmd_conjugate, "check-conditions": cmd_check_conditions,
            "cell": cmd_cell, "effective": cmd_effective, "homogenize": cmd_homogenize,
            "converge": cmd_converge}


HELP = {
    "conjugate": "tabulate a radial slice of M, its conjugate and biconjugate",
    "check-conditions": "run the sampled growth-condition checks on M",
    "cell": "solve cell problems at the xi nodes",
    "effective": "tabulate hat A, f and f* and verify their properties",
    "homogenize": "solve the homogenized and oscillatory Dirichlet problems",
    "converge": "run an eps-convergence study with two-scale diagnostics",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mohom", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", required=True, help="YAML experiment config")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--workers", type=int, default=1, help="process pool size")
        sp.add_argument("--seed", type=int, default=0,
                        help="reserved; all pipelines are deterministic")
        sp.add_argument("--tol", type=float, help="override numerics.tol")
    return parser


def run(command, cfg, out_dir, workers=1, seed=0):
    """Run a subcommand on a resolved config and write its outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in cfg.items() if not k.startswith("_")}
    echo["output"] = {"dir": str(out)}
    echo["seed"] = seed
    (out / "config.resolved.yaml").write_text(yaml.safe_dump(echo, sort_keys=True))
    summary = HANDLERS[command](cfg, out, workers)
    _io.write_json(out / "summary.json", {"command": command, **summary})
    return summary


def main(argv=None):
    from .nfunction import BoundarySaturationError, RangeError
    from .solver import ConvergenceError
    from .twoscale import AlignmentError
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.tol)
        out = args.out or cfg["output"]["dir"]
        summary = run(args.command, cfg, out, args.workers, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, RangeError, BoundarySaturationError, AlignmentError,
            RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(_io.json_dumps({"command": args.command, **summary}))
    return 0
