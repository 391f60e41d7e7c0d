"""Command-line front end: JSON problem configs in, JSON reports (and CSV tables) out.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Any, Callable

import jsonschema
import numpy as np

from . import tables
from .chain_model import (
    ChainModel,
    PayoffSpec,
    build_random_walk,
    call_payoff,
    discretize_diffusion,
    power_payoff,
    put_payoff,
)
from .diffusion_scale import DiffusionSpec
from .doob_meyer import decompose, increment_bound_check, mu_density, partition_approximation
from .dual_bounds import DEFAULT_PATH_CAP, count_paths, dual_bound_exact, dual_bound_mc
from .errors import NumericalError, ValidationError
from .majorant_smoothfit import estimate_boundary, smooth_fit_check, solve_by_majorant, stopping_region, value_from_majorant
from .snell_engine import solve_perpetual, solve_snell

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
TABLE_LIMIT = 5000  # largest node count inlined into JSON reports

_num = {"type": "number"}
_form = {
    "type": "object",
    "required": ["form"],
    "properties": {"form": {"enum": ["constant", "affine", "gbm", "ou"]}},
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model", "payoff"],
    "properties": {
        "model": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["kind", "states", "transition"],
                    "properties": {
                        "kind": {"const": "chain"},
                        "states": {"type": "array", "items": _num, "minItems": 1},
                        "transition": {"type": "array", "items": {"type": "array", "items": _num}},
                        "dt": _num, "alpha": _num, "horizon": {"type": "integer"},
                    },
                },
                {
                    "type": "object",
                    "required": ["kind", "n_states"],
                    "properties": {
                        "kind": {"const": "random_walk"},
                        "n_states": {"type": "integer"}, "horizon": {"type": "integer"},
                        "dt": _num, "alpha": _num,
                    },
                },
                {
                    "type": "object",
                    "required": ["kind", "interval", "drift", "vol"],
                    "properties": {
                        "kind": {"const": "diffusion"},
                        "interval": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                        "drift": _form, "vol": _form, "alpha": _num,
                        "grid_points": {"type": "integer"}, "grid": {"enum": ["uniform", "geometric"]},
                        "dt": _num, "horizon": {"type": "integer"},
                    },
                },
            ]
        },
        "payoff": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["put", "call", "power", "table"]}},
        },
        "run": {"type": "object"},
    },
}

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": ["number", "null", "boolean"]}}}
_base_report = {"command": {"type": "string"}, "model": {"type": "string"}}
REPORT_SCHEMAS = {
    "solve": ["S_0", "x0", "horizon", "stop_region"],
    "decompose": ["dA", "dM_row_mean_max", "dD", "dDplus", "dDminus", "bound_check"],
    "mu": ["mu", "defined", "mu_min", "mu_max"],
    "approx-dm": ["levels", "probe_times", "errors", "cesaro", "total_mass", "A_mean", "An_at"],
    "dual": ["mean", "stderr", "n_paths", "seed", "exact", "S_0", "f"],
    "diffusion-solve": ["b_star", "stop_region", "probes", "V"],
    "smoothfit": ["b_star", "h", "left_deriv", "right_deriv", "gap", "gap_extrapolated"],
}


def report_schema(command: str) -> dict:
    return {
        "type": "object",
        "required": ["command", *REPORT_SCHEMAS[command]],
        "properties": {**_base_report, "command": {"const": command}},
    }


# ---------------------------------------------------------------- config parsing

def _coefficient(spec: dict, role: str) -> Callable[[np.ndarray], np.ndarray]:
    form = spec["form"]
    try:
        if form == "constant":
            c = float(spec["value"])
            return lambda x: np.full_like(np.asarray(x, dtype=float), c)
        if form == "affine":
            a, b = float(spec.get("intercept", 0.0)), float(spec.get("slope", 0.0))
            return lambda x: a + b * np.asarray(x, dtype=float)
        if form == "gbm":
            c = float(spec["coef"])
            return lambda x: c * np.asarray(x, dtype=float)
        if form == "ou":
            if role == "vol":
                s = float(spec["sigma"])
                return lambda x: np.full_like(np.asarray(x, dtype=float), s)
            k, th = float(spec["kappa"]), float(spec["theta"])
            return lambda x: k * (th - np.asarray(x, dtype=float))
    except KeyError as exc:
        raise ValidationError(f"{role} form {form!r} is missing parameter {exc.args[0]!r}") from None
    raise ValidationError(f"unknown {role} form {form!r}")


def _payoff_fn(spec: dict) -> Callable[[np.ndarray], np.ndarray] | None:
    kind = spec["kind"]
    try:
        if kind == "put":
            return put_payoff(float(spec["strike"]))
        if kind == "call":
            return call_payoff(float(spec["strike"]))
        if kind == "power":
            return power_payoff(float(spec["power"]), float(spec.get("coef", 1.0)), float(spec.get("offset", 0.0)))
    except KeyError as exc:
        raise ValidationError(f"payoff {kind!r} is missing parameter {exc.args[0]!r}") from None
    return None


class Problem:
    def __init__(self, config: dict, args: argparse.Namespace):
        try:
            jsonschema.validate(config, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ValidationError(f"config invalid at {path}: {exc.message}") from None
        self.config = config
        self.model_cfg = config["model"]
        self.payoff_cfg = config["payoff"]
        self.run = dict(config.get("run", {}))
        for key, val in (("seed", args.seed), ("n_paths", args.paths), ("grid_points", args.grid), ("tol", args.tol)):
            if val is not None:
                self.run[key] = val
        if args.grid is not None and self.model_cfg["kind"] == "diffusion":
            self.model_cfg = {**self.model_cfg, "grid_points": args.grid}
        self.kind = self.model_cfg["kind"]

    # diffusion pieces
    def diffusion(self) -> tuple[DiffusionSpec, np.ndarray]:
        m = self.model_cfg
        if self.kind != "diffusion":
            raise ValidationError("this command needs a diffusion model")
        spec = DiffusionSpec(
            tuple(m["interval"]), _coefficient(m["drift"], "drift"), _coefficient(m["vol"], "vol"),
            float(m.get("alpha", 0.0)), "diffusion",
        )
        n = int(m.get("grid_points", 2001))
        grid = spec.geometric_grid(n) if m.get("grid", "uniform") == "geometric" else spec.uniform_grid(n)
        return spec, grid

    def chain(self) -> ChainModel:
        m = self.model_cfg
        if self.kind == "chain":
            return ChainModel(
                np.asarray(m["states"], dtype=float), np.asarray(m["transition"], dtype=float),
                float(m.get("dt", 1.0)), float(m.get("alpha", 0.0)), int(m.get("horizon", 1)),
            )
        if self.kind == "random_walk":
            return build_random_walk(int(m["n_states"]), int(m.get("horizon", 1)), float(m.get("dt", 1.0)), float(m.get("alpha", 0.0)))
        spec, grid = self.diffusion()
        return discretize_diffusion(
            spec.drift, spec.vol, grid=grid, dt=float(m.get("dt", 1e-3)),
            alpha=spec.alpha, horizon=int(m.get("horizon", 1)),
        )

    def payoff_fn(self):
        fn = _payoff_fn(self.payoff_cfg)
        if fn is None:
            raise ValidationError("a table payoff cannot be used on a continuous grid")
        return fn

    def payoff(self, chain: ChainModel) -> PayoffSpec:
        spec = self.payoff_cfg
        if spec["kind"] == "table":
            vals = np.asarray(spec.get("values", []), dtype=float)
            if vals.size != chain.n_states:
                raise ValidationError(f"table payoff has {vals.size} values for {chain.n_states} states")
            return PayoffSpec(vals, "table")
        return PayoffSpec(self.payoff_fn()(chain.states), spec["kind"])

    def x0(self, chain: ChainModel) -> int:
        x = self.run.get("x0")
        return chain.center if x is None else chain.index_of(float(x))

    @property
    def tol(self) -> float:
        return float(self.run.get("tol", 1e-10))


# ---------------------------------------------------------------- commands

def _clean(a) -> Any:
    """Nested lists with NaN/inf mapped to None."""
    if isinstance(a, np.ndarray):
        return _clean(a.tolist())
    if isinstance(a, (list, tuple)):
        return [_clean(v) for v in a]
    if isinstance(a, dict):
        return {str(k): _clean(v) for k, v in a.items()}
    if isinstance(a, (np.floating, float)):
        v = float(a)
        return v if math.isfinite(v) else None
    if isinstance(a, (np.integer,)):
        return int(a)
    if isinstance(a, np.bool_):
        return bool(a)
    return a


def _intervals(mask: np.ndarray, states: np.ndarray) -> list[list[float]]:
    out, k = [], 0
    while k < mask.size:
        if mask[k]:
            j = k
            while j + 1 < mask.size and mask[j + 1]:
                j += 1
            out.append([float(states[k]), float(states[j])])
            k = j + 1
        else:
            k += 1
    return out


def cmd_solve(p: Problem, csv_path: str | None) -> dict:
    chain = p.chain()
    payoff = p.payoff(chain)
    sol = solve_snell(chain, payoff, contact_tol=p.tol)
    x0 = p.x0(chain)
    rep = {
        "S_0": float(sol.S[0, x0]),
        "x0": float(chain.states[x0]),
        "horizon": chain.horizon,
        "stop_region": {str(k): _intervals(sol.stop_region[k], chain.states) for k in range(chain.horizon + 1)},
    }
    if p.run.get("perpetual"):
        per = solve_perpetual(chain, payoff, tol=float(p.run.get("perpetual_tol", 1e-9)))
        rep["perpetual"] = {"V_x0": float(per.values[x0]), "steps": per.steps, "error_bound": per.error_bound,
                            "stop_region": _intervals(per.stop_region, chain.states)}
    if sol.S.size <= TABLE_LIMIT:
        rep["S"] = sol.S
        rep["cont"] = sol.cont
    if csv_path:
        tables.write_csv(csv_path, tables.SOLUTION_HEADER, tables.solution_rows(sol))
    return rep


def cmd_decompose(p: Problem, csv_path: str | None) -> dict:
    chain = p.chain()
    payoff = p.payoff(chain)
    dec = decompose(chain, payoff)
    bc = increment_bound_check(dec, tol=p.tol)
    row_mean = np.einsum("ij,kij->ki", chain.transition, dec.dM)
    rep = {
        "dA": dec.dA, "dD": dec.dD, "dDplus": dec.dDplus, "dDminus": dec.dDminus,
        "dM_row_mean_max": float(np.abs(row_mean).max(initial=0.0)),
        "bound_check": {"ok": bc.ok, "max_violation": bc.max_violation, "worst_node": list(bc.worst_node)},
    }
    if csv_path:
        tables.write_csv(csv_path, tables.DECOMPOSITION_HEADER, tables.decomposition_rows(dec))
    return rep


def cmd_mu(p: Problem, csv_path: str | None) -> dict:
    chain = p.chain()
    payoff = p.payoff(chain)
    dec = decompose(chain, payoff)
    mu = mu_density(dec)
    defined = ~np.isnan(mu)
    rep = {
        "mu": mu,
        "defined": int(defined.sum()),
        "mu_min": float(mu[defined].min()) if defined.any() else None,
        "mu_max": float(mu[defined].max()) if defined.any() else None,
    }
    if csv_path:
        tables.write_csv(csv_path, tables.DECOMPOSITION_HEADER, tables.decomposition_rows(dec))
    return rep


def cmd_approx_dm(p: Problem, csv_path: str | None) -> dict:
    chain = p.chain()
    payoff = p.payoff(chain)
    N = chain.horizon
    probes = p.run.get("probe_times", [N // 4, N // 2, N])
    ar = partition_approximation(chain, payoff, probes, p.run.get("levels"), p.x0(chain))
    rep = {
        "levels": ar.levels, "probe_times": ar.probe_times,
        "partitions": [pts.tolist() for pts in ar.partitions],
        "A_mean": ar.A_mean, "An_at": ar.An_at, "errors": ar.errors, "cesaro": ar.cesaro,
        "total_mass": ar.total_mass,
    }
    if csv_path:
        tables.write_csv(csv_path, tables.APPROX_HEADER, tables.approx_rows(ar))
    return rep


def cmd_dual(p: Problem, csv_path: str | None) -> dict:
    chain = p.chain()
    payoff = p.payoff(chain)
    sol = solve_snell(chain, payoff)
    x0 = p.x0(chain)
    f_cfg = p.run.get("f", "value")
    if f_cfg == "value":
        f = sol.S
    elif f_cfg == "zero":
        f = np.zeros(chain.n_states)
    elif f_cfg == "payoff":
        f = payoff.g
    elif isinstance(f_cfg, list):
        f = np.asarray(f_cfg, dtype=float)
    else:
        raise ValidationError(f"run.f must be 'value', 'zero', 'payoff' or an array, got {f_cfg!r}")
    method = p.run.get("method", "auto")
    cap = int(p.run.get("path_cap", DEFAULT_PATH_CAP))
    if method == "auto":
        method = "exact" if "n_paths" not in p.run and count_paths(chain, x0) <= cap else "mc"
    if method == "exact":
        est = dual_bound_exact(chain, payoff, f, x0, cap)
    elif method == "mc":
        est = dual_bound_mc(chain, payoff, f, int(p.run.get("n_paths", 100_000)), int(p.run.get("seed", 0)), x0)
    else:
        raise ValidationError(f"run.method must be 'auto', 'exact' or 'mc', got {method!r}")
    return {
        "mean": est.mean, "stderr": est.stderr, "n_paths": est.n_paths, "seed": est.seed,
        "exact": est.exact, "S_0": float(sol.S[0, x0]), "f": f_cfg if isinstance(f_cfg, str) else "array",
    }


def _interior_boundaries(x, V, g, tol):
    b = estimate_boundary(x, V, g, tol)
    return b[(b > x[1]) & (b < x[-2])]


def cmd_diffusion_solve(p: Problem, csv_path: str | None) -> dict:
    spec, grid = p.diffusion()
    ms = solve_by_majorant(spec, p.payoff_fn(), grid)
    a, b = spec.interval
    probes = np.asarray(p.run.get("probes", np.linspace(a, b, 11)[1:-1]), dtype=float)
    rep = {
        "b_star": _interior_boundaries(ms.x, ms.V, ms.g, p.tol),
        "stop_region": [list(iv) for iv in stopping_region(ms.x, ms.V, ms.g, p.tol)],
        "probes": probes,
        "V": value_from_majorant(ms.W, ms.pair, probes),
    }
    if p.run.get("lattice"):
        m = p.model_cfg
        n_lat = int(p.run.get("lattice_points", 400))
        lat_grid = np.geomspace(a, b, n_lat) if m.get("grid", "uniform") == "geometric" else np.linspace(a, b, n_lat)
        chain = discretize_diffusion(spec.drift, spec.vol, grid=lat_grid, dt=float(m.get("dt", 1e-3)), alpha=spec.alpha)
        per = solve_perpetual(chain, PayoffSpec(p.payoff_fn()(chain.states)), tol=float(p.run.get("perpetual_tol", 1e-9)))
        rep["lattice_V"] = np.interp(probes, chain.states, per.values)
        rep["lattice_steps"] = per.steps
    if csv_path:
        tables.write_csv(csv_path, tables.VALUE_HEADER, tables.value_rows(ms.x, ms.g, ms.V, p.tol))
    return rep


def cmd_smoothfit(p: Problem, csv_path: str | None) -> dict:
    spec, grid = p.diffusion()
    ms = solve_by_majorant(spec, p.payoff_fn(), grid)
    bps = _interior_boundaries(ms.x, ms.V, ms.g, p.tol)
    if bps.size == 0:
        raise NumericalError("no interior stopping boundary found")
    rep = smooth_fit_check(ms.x, ms.V, bps, p.run.get("h_ladder"), ms.g)
    if csv_path:
        tables.write_csv(csv_path, tables.SMOOTHFIT_HEADER, tables.smoothfit_rows(rep))
    return {
        "b_star": rep.boundary_points, "h": rep.h,
        "left_deriv": rep.left_deriv, "right_deriv": rep.right_deriv, "gap": rep.gap,
        "left_extrapolated": rep.left_extrapolated, "right_extrapolated": rep.right_extrapolated,
        "gap_extrapolated": rep.gap_extrapolated, "max_second_difference": rep.max_second_difference,
    }


COMMANDS = {
    "solve": cmd_solve,
    "decompose": cmd_decompose,
    "mu": cmd_mu,
    "approx-dm": cmd_approx_dm,
    "dual": cmd_dual,
    "diffusion-solve": cmd_diffusion_solve,
    "smoothfit": cmd_smoothfit,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snellkit", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON problem definition")
    ap.add_argument("--csv", help="write the node-level table here")
    ap.add_argument("--seed", type=int, help="Monte Carlo seed (unsigned 64-bit)")
    ap.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    ap.add_argument("--grid", type=int, help="diffusion grid points")
    ap.add_argument("--tol", type=float, help="contact tolerance for regions")
    ap.add_argument("--quiet", action="store_true", help="suppress the JSON report on stdout")
    return ap


def render(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def run(argv: list[str] | None = None) -> tuple[int, str]:
    """Execute one command; returns ``(exit_code, text)``."""
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ValidationError("--seed must be an unsigned 64-bit integer")
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from None
        problem = Problem(config, args)
        body = COMMANDS[args.command](problem, args.csv)
        report = {"command": args.command, "model": problem.kind, **body}
        text = render(report)
        jsonschema.validate(json.loads(text), report_schema(args.command))
        return EXIT_OK, text
    except ValidationError as exc:
        return EXIT_VALIDATION, f"error: {exc}\n"
    except NumericalError as exc:
        return EXIT_NUMERICAL, f"numerical failure: {exc}\n"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    code, text = run(argv)
    if code != EXIT_OK:
        sys.stderr.write(text)
    elif not args.quiet:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
