"""Command-line front end: Green's tables, solvers, sweeps, verification suites and scans.

Every command writes a JSON report (and, for some commands, CSV files) to the
output directory. Reports embed the resolved configuration, the Green's table
fingerprint and the package version. They carry no timestamps, so identical
inputs give byte-identical reports.

Exit codes: 0 success, 2 argument error, 3 solver nonconvergence,
4 internal consistency failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .absorption import (AbsorptionProblem, BarrierConstructionError, ExtremalConstructionError,
                         MEASURED_BARRIER_BOUNDS, MonotonicityError, CLAIMED_BARRIER_BOUNDS,
                         extremal_table_radius, find_m0, layer_structure_details, solve_absorption,
                         solve_extremal)
from .analysis import Constants, admissible_region_scan, measure_constants
from .convolution import decay_suite
from .dirichlet import SolverError, maximum_principle_suite
from .fixedpoint import IterationOptions, NonConvergenceError
from .greens import (CLASSICAL_CONSTANT, HALF_GAMMA0, GreensConstructionError, asymptotic_fit,
                     eval_phi0, fourier_oracle, load_or_build)
from .lattice import DomainError, TruncatedDomain, laplacian_grid
from .source import SourceProblem, required_table_radius, solve_source

log = logging.getLogger("kwlattice")

EXIT_OK = 0
EXIT_ARGUMENT = 2
EXIT_NONCONVERGENCE = 3
EXIT_CONSISTENCY = 4


class ArgumentError(ValueError):
    """Invalid or inconsistent run configuration."""


class ConsistencyFailure(RuntimeError):
    """A verification ran to completion and found a violated property."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report


# -- configuration -------------------------------------------------------------------

#: defaults per command; keys double as config-file keys and flag destinations
DEFAULTS = {
    "greens build": {"radius": 64, "quadrature_points": 2048, "csv": False},
    "greens check": {"radius": 64, "quadrature_points": 2048},
    "solve source": {"kappa": None, "alpha": None, "sigma": None, "beta": 0.0, "radius": 256,
                     "tol": 1e-10, "max_iter": 2000, "damping": 0.5, "patience": 8, "save_solution": False},
    "solve absorption": {"kappa": None, "alpha": None, "sigma": None, "beta": None, "radius": 256,
                         "tol": 1e-10, "max_iter": 2000, "damping": 0.5, "patience": 8,
                         "save_solution": False},
    "solve extremal": {"kappa": None, "beta": None, "radius": 512, "tol": 1e-8, "max_iter": 200,
                       "exterior": "asymptotic", "shift": None, "save_solution": False},
    "sweep alpha": {"case": "source", "kappa": None, "beta": 0.0, "values": None, "radius": 128,
                    "tol": 1e-10, "max_iter": 2000, "damping": 0.5, "patience": 8, "workers": 2},
    "sweep beta": {"case": "source", "kappa": None, "alpha": None, "sigma": None, "values": None,
                   "radius": 128, "tol": 1e-10, "max_iter": 2000, "damping": 0.5, "patience": 8, "workers": 2},
    "sweep kappa": {"case": "source", "sigma": None, "beta": 0.0, "values": None, "radius": 128,
                    "tol": 1e-10, "max_iter": 2000, "damping": 0.5, "patience": 8, "workers": 2},
    "verify decay": {"ms": "3,4,6", "samples": 20, "radius": 256, "seed": 0},
    "verify maxprinciple": {"instances": 1000, "pairs": 100, "seed": 0},
    "verify layers": {"kappa": None, "beta": None, "alphas": None, "radius": 128, "tol": 1e-10,
                      "max_iter": 2000, "damping": 0.5, "patience": 8},
    "verify barrier": {"lower": CLAIMED_BARRIER_BOUNDS[0], "upper": CLAIMED_BARRIER_BOUNDS[1], "start": 10,
                       "limit": 100},
    "scan thresholds": {"table_radius": 128, "c0": None, "c1": None, "C2": None, "sigma_min": 2.0,
                        "sigma_max": 20.0, "points": 3600, "seed": 0},
}


def _floats(text, name: str) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ArgumentError(f"{name} must be a comma-separated list of numbers, got {text!r}") from exc


def load_config(path: str | None) -> dict:
    """Flat key-value JSON object; keys use the flag names with underscores."""
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArgumentError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise ArgumentError("config must be a flat JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_config(command: str, file_cfg: dict, flags: dict) -> dict:
    """Defaults, then the config file, then explicit flags."""
    defaults = DEFAULTS[command]
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ArgumentError(f"unknown config keys for '{command}': {sorted(unknown)}")
    cfg = dict(defaults)
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in flags.items() if k in defaults})
    return cfg


def normalize_alpha(cfg: dict) -> float:
    """Return alpha from either alpha or sigma = alpha kappa / 2 pi."""
    kappa, alpha, sigma = cfg.get("kappa"), cfg.get("alpha"), cfg.get("sigma")
    if kappa is None:
        raise ArgumentError("kappa is required")
    if alpha is None and sigma is None:
        raise ArgumentError("give alpha or sigma")
    from_sigma = None if sigma is None else 2.0 * math.pi * float(sigma) / float(kappa)
    if alpha is not None and from_sigma is not None and not math.isclose(float(alpha), from_sigma, rel_tol=1e-12):
        raise ArgumentError(f"alpha = {alpha} and sigma = {sigma} disagree at kappa = {kappa}")
    return float(alpha) if alpha is not None else from_sigma


def _require(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ArgumentError(f"missing required parameters: {', '.join(missing)}")


def _options(cfg: dict) -> IterationOptions:
    return IterationOptions(tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]),
                            damping=float(cfg["damping"]), patience=int(cfg["patience"]))


# -- output --------------------------------------------------------------------------

def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


class Output:
    def __init__(self, directory: str):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def report(self, name: str, command: str, cfg: dict, body: dict, fingerprint: str | None) -> Path:
        doc = {"command": command, "version": __version__, "config": cfg,
               "table_fingerprint": fingerprint, "result": body}
        path = self.dir / f"{name}.json"
        path.write_text(json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def text(self, name: str, content: str) -> Path:
        path = self.dir / name
        path.write_text(content, encoding="utf-8")
        return path


# -- commands --------------------------------------------------------------------------

def cmd_greens_build(cfg, out: Output):
    table = load_or_build(int(cfg["radius"]), int(cfg["quadrature_points"]))
    if cfg["csv"]:
        table.save_csv(out.dir / f"greens_R{table.exact_radius}.csv")
    out.report(f"greens_R{table.exact_radius}", "greens build", cfg, table.metadata(), table.fingerprint)
    return 0


def cmd_greens_check(cfg, out: Output):
    R = int(cfg["radius"])
    table = load_or_build(R, int(cfg["quadrature_points"]))
    checks = {}
    for pt, exact in (((1, 0), -0.25), ((1, 1), -1.0 / math.pi), ((2, 0), -1.0 + 2.0 / math.pi)):
        val = float(eval_phi0(table, *pt))
        oracle = fourier_oracle(*pt)
        checks[f"{pt[0]},{pt[1]}"] = {"table": val, "oracle": oracle, "closed_form": exact,
                                      "error_vs_oracle": abs(val - oracle), "error_vs_closed_form": abs(val - exact)}
    dom = TruncatedDomain(R - 2)
    x1, x2 = dom.coords
    vals = np.where(dom.closure, eval_phi0(table, x1, x2), np.nan)
    lap = -laplacian_grid(vals, dom.interior)
    lap[dom.index((0, 0))] -= 1.0
    residual = float(np.nanmax(np.abs(np.where(dom.interior, lap, np.nan))))
    body = {"points": checks, "laplacian_residual": residual, "laplacian_radius": R - 2,
            "metadata": table.metadata()}
    if R >= 64:
        const, res_r = asymptotic_fit(table)
        body["asymptotic_constant"] = const
        body["max_residual_times_r"] = res_r
        body["closest_reference"] = ("classical" if abs(const - CLASSICAL_CONSTANT) < abs(const - HALF_GAMMA0)
                                     else "half_gamma0")
    ok = (abs(checks["1,0"]["table"] + 0.25) < 1e-12
          and all(c["error_vs_oracle"] < 1e-6 for c in checks.values()) and residual < 1e-10)
    body["passed"] = ok
    out.report(f"greens_check_R{R}", "greens check", cfg, body, table.fingerprint)
    if not ok:
        raise ConsistencyFailure("Green's table check failed", body)
    return 0


def _solve_source_cfg(cfg, table=None):
    alpha = normalize_alpha(cfg)
    p = SourceProblem(float(cfg["kappa"]), alpha, float(cfg["beta"]), int(cfg["radius"]))
    table = table or load_or_build(required_table_radius(p.domain_radius))
    return p, table, solve_source(p, table, _options(cfg))


def _solve_absorption_cfg(cfg, table=None):
    _require(cfg, "beta")
    alpha = normalize_alpha(cfg)
    p = AbsorptionProblem(float(cfg["kappa"]), float(cfg["beta"]), alpha, int(cfg["radius"]))
    table = table or load_or_build(required_table_radius(p.domain_radius))
    return p, table, solve_absorption(p, table, _options(cfg))


def _finish_solve(name, command, cfg, rep, table, out: Output):
    body = rep.to_json()
    if cfg.get("save_solution"):
        rep.solution.save(out.dir / f"{name}_solution")
        body["solution_csv"] = f"{name}_solution.csv"
    csv_text = body.pop("gap_series_csv", None)
    if csv_text:
        out.text(f"{name}_gaps.csv", csv_text)
    out.report(name, command, cfg, body, table.fingerprint)


def cmd_solve_source(cfg, out: Output):
    p, table, rep = _solve_source_cfg(cfg)
    _finish_solve("solve_source", "solve source", dict(cfg, alpha=p.alpha), rep, table, out)
    return 0


def cmd_solve_absorption(cfg, out: Output):
    p, table, rep = _solve_absorption_cfg(cfg)
    _finish_solve("solve_absorption", "solve absorption", dict(cfg, alpha=p.alpha), rep, table, out)
    return 0


def cmd_solve_extremal(cfg, out: Output):
    _require(cfg, "kappa", "beta")
    R = int(cfg["radius"])
    table = load_or_build(extremal_table_radius(R))
    rep = solve_extremal(float(cfg["kappa"]), float(cfg["beta"]), table, IterationOptions(tol=float(cfg["tol"])),
                         radius=R, max_iter=int(cfg["max_iter"]), exterior=str(cfg["exterior"]),
                         shift=None if cfg["shift"] is None else float(cfg["shift"]))
    _finish_solve("solve_extremal", "solve extremal", cfg, rep, table, out)
    return 0


def _sweep(parameter: str, cfg, out: Output):
    _require(cfg, "values")
    values = _floats(cfg["values"], "values")
    case = cfg["case"]
    if case not in ("source", "absorption"):
        raise ArgumentError("case must be 'source' or 'absorption'")
    runs = []
    for v in values:
        run = dict(cfg, **{parameter: v})
        if parameter == "alpha":
            run["sigma"] = None
        if parameter == "kappa" and cfg.get("sigma") is None and cfg.get("alpha") is None:
            raise ArgumentError("a kappa sweep needs sigma or alpha")
        runs.append(run)
    # validate every run before starting work
    problems = []
    for run in runs:
        alpha = normalize_alpha(run)
        if case == "source":
            problems.append(SourceProblem(float(run["kappa"]), alpha, float(run["beta"]), int(run["radius"])))
        else:
            _require(run, "beta")
            problems.append(AbsorptionProblem(float(run["kappa"]), float(run["beta"]), alpha, int(run["radius"])))
    table = load_or_build(required_table_radius(int(cfg["radius"])))
    opts = _options(cfg)
    solve = solve_source if case == "source" else solve_absorption

    def one(p):
        try:
            return solve(p, table, opts), None
        except NonConvergenceError as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, int(cfg["workers"]))) as pool:
        results = list(pool.map(one, problems))
    lines = ["parameter,value,kappa,alpha,beta,total_energy,target_energy,relative_identity_residual,"
             "fitted_slope,fitted_constant_d,iterations,converged"]
    rows = []
    for v, p, (rep, err) in zip(values, problems, results):
        row = {"value": v, "kappa": p.kappa, "alpha": p.alpha, "beta": p.beta, "converged": rep is not None}
        if rep is not None:
            row.update(total_energy=rep.total_energy, target_energy=rep.target_energy,
                       relative_identity_residual=rep.relative_identity_residual,
                       fitted_slope=rep.fitted_slope, fitted_constant_d=rep.fitted_constant_d,
                       iterations=rep.iterations)
        else:
            row["error"] = err
        rows.append(row)
        fields = [parameter, repr(float(v)), repr(p.kappa), repr(p.alpha), repr(p.beta)]
        fields += ([repr(row[k]) for k in ("total_energy", "target_energy", "relative_identity_residual",
                                            "fitted_slope", "fitted_constant_d")] + [str(row["iterations"]), "1"]
                   if rep is not None else [""] * 6 + ["0"])
        lines.append(",".join(fields))
    out.text(f"sweep_{parameter}.csv", "\n".join(lines) + "\n")
    out.report(f"sweep_{parameter}", f"sweep {parameter}", cfg, {"case": case, "runs": rows}, table.fingerprint)
    if any(not r["converged"] for r in rows):
        raise NonConvergenceError("some sweep runs did not converge", [])
    return 0


def cmd_verify_decay(cfg, out: Output):
    R = int(cfg["radius"])
    table = load_or_build(required_table_radius(R))
    body = decay_suite(table, _floats(cfg["ms"], "ms"), int(cfg["samples"]), R, int(cfg["seed"]))
    out.report("verify_decay", "verify decay", cfg, body, table.fingerprint)
    if not body["passed"]:
        raise ConsistencyFailure("decay envelope check failed", body)
    return 0


def cmd_verify_maxprinciple(cfg, out: Output):
    body = maximum_principle_suite(int(cfg["instances"]), int(cfg["pairs"]), int(cfg["seed"]))
    out.report("verify_maxprinciple", "verify maxprinciple", cfg, body, None)
    if not body["passed"]:
        raise ConsistencyFailure("maximum principle suite found counterexamples", body)
    return 0


def cmd_verify_layers(cfg, out: Output):
    _require(cfg, "kappa", "beta", "alphas")
    alphas = sorted(_floats(cfg["alphas"], "alphas"))
    kappa, beta, R = float(cfg["kappa"]), float(cfg["beta"]), int(cfg["radius"])
    problems = [AbsorptionProblem(kappa, beta, a, R) for a in alphas]
    table = load_or_build(required_table_radius(R))
    opts = _options(cfg)
    reports = [solve_absorption(p, table, opts) for p in problems]
    details = layer_structure_details(reports, tol=opts.tol)
    body = dict(details, alphas=alphas, layer_structure=bool(details["ordered"] and details["energies_ok"]),
                d_bounds=[{k: r.extras[k] for k in r.extras if k.startswith("d_bound")} | {"d": r.fitted_constant_d}
                          for r in reports])
    out.report("verify_layers", "verify layers", cfg, body, table.fingerprint)
    if not body["layer_structure"]:
        raise ConsistencyFailure("layer structure check failed", body)
    return 0


def cmd_verify_barrier(cfg, out: Output):
    try:
        b = find_m0(float(cfg["lower"]), float(cfg["upper"]), int(cfg["start"]), int(cfg["limit"]))
    except BarrierConstructionError as exc:
        body = {"passed": False, "error": str(exc), "measured_bounds": list(MEASURED_BARRIER_BOUNDS)}
        out.report("verify_barrier", "verify barrier", cfg, body, None)
        raise ConsistencyFailure(str(exc), body) from exc
    body = dict(b.to_json(), passed=True)
    out.report("verify_barrier", "verify barrier", cfg, body, None)
    return 0


def cmd_scan_thresholds(cfg, out: Output):
    fingerprint = None
    given = {k: cfg[k] for k in ("c0", "c1", "C2")}
    if all(v is not None for v in given.values()):
        constants = Constants(**{k: float(v) for k, v in given.items()})
    else:
        table = load_or_build(int(cfg["table_radius"]))
        fingerprint = table.fingerprint
        measured = measure_constants(table, seed=int(cfg["seed"])).to_json()
        measured.update({k: float(v) for k, v in given.items() if v is not None})
        constants = Constants(**measured)
    lo, hi = float(cfg["sigma_min"]), float(cfg["sigma_max"])
    if not 2.0 <= lo < hi:
        raise ArgumentError("need 2 <= sigma_min < sigma_max")
    grid = np.linspace(lo, hi, int(cfg["points"]) + 1)[1:] if lo == 2.0 else np.linspace(lo, hi, int(cfg["points"]))
    scan = admissible_region_scan(constants, grid)
    out.text("scan_thresholds.csv", scan.csv())
    body = dict(scan.to_json(), constants=constants.to_json())
    out.report("scan_thresholds", "scan thresholds", cfg, body, fingerprint)
    return 0


COMMANDS = {
    "greens build": cmd_greens_build,
    "greens check": cmd_greens_check,
    "solve source": cmd_solve_source,
    "solve absorption": cmd_solve_absorption,
    "solve extremal": cmd_solve_extremal,
    "sweep alpha": lambda c, o: _sweep("alpha", c, o),
    "sweep beta": lambda c, o: _sweep("beta", c, o),
    "sweep kappa": lambda c, o: _sweep("kappa", c, o),
    "verify decay": cmd_verify_decay,
    "verify maxprinciple": cmd_verify_maxprinciple,
    "verify layers": cmd_verify_layers,
    "verify barrier": cmd_verify_barrier,
    "scan thresholds": cmd_scan_thresholds,
}


# -- parser ----------------------------------------------------------------------------

_FLAG_TYPES = {
    "radius": int, "quadrature_points": int, "max_iter": int, "patience": int, "workers": int, "samples": int,
    "seed": int, "instances": int, "pairs": int, "start": int, "limit": int, "table_radius": int, "points": int,
    "kappa": float, "alpha": float, "sigma": float, "beta": float, "tol": float, "damping": float,
    "lower": float, "upper": float, "c0": float, "c1": float, "C2": float, "sigma_min": float,
    "sigma_max": float, "shift": float,
    "values": str, "alphas": str, "ms": str, "case": str, "exterior": str,
}
_CHOICES = {"case": ("source", "absorption"), "exterior": ("asymptotic", "literal")}
_BOOL_FLAGS = {"csv", "save_solution"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kwlattice", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    groups = {}
    sub = parser.add_subparsers(dest="group", required=True)
    for command, defaults in DEFAULTS.items():
        group, action = command.split()
        if group not in groups:
            gp = sub.add_parser(group, help=f"{group} commands")
            groups[group] = gp.add_subparsers(dest="action", required=True)
        p = groups[group].add_parser(action, help=f"{command}")
        p.add_argument("--config", help="flat JSON file of parameters; flags override it")
        p.add_argument("--out", default="kwlattice-out", help="output directory (default: %(default)s)")
        p.add_argument("--cache", help="Green's table cache directory (overrides KWLATTICE_CACHE)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
        for key, default in defaults.items():
            flag = "--" + key.replace("_", "-")
            if key in _BOOL_FLAGS:
                p.add_argument(flag, dest=key, action="store_true", default=argparse.SUPPRESS)
            else:
                p.add_argument(flag, dest=key, type=_FLAG_TYPES[key], choices=_CHOICES.get(key),
                               default=argparse.SUPPRESS, help=f"default: {default}")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_ARGUMENT
    command = f"{ns.group} {ns.action}"
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if ns.cache:
        os.environ["KWLATTICE_CACHE"] = ns.cache
    flags = {k: v for k, v in vars(ns).items() if k not in ("group", "action", "config", "out", "cache", "verbose")}
    try:
        cfg = resolve_config(command, load_config(ns.config), flags)
        out = Output(ns.out)
        code = COMMANDS[command](cfg, out)
        print(f"{command}: ok ({out.dir})", file=sys.stderr)
        return code
    except (ArgumentError, DomainError, ValueError) as exc:
        print(f"{command}: argument error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    except NonConvergenceError as exc:
        print(f"{command}: did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConsistencyFailure, ExtremalConstructionError, MonotonicityError, BarrierConstructionError,
            GreensConstructionError, SolverError) as exc:
        print(f"{command}: consistency failure: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY


if __name__ == "__main__":
    sys.exit(main())
