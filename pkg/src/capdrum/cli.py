"""``capdrum`` command line: constants, capacity, eigen, radius, bounds and suite.

Every subcommand prints (or writes with ``--output``) one JSON document
with sorted keys and a ``config`` block echoing the parsed flags.  Exit
status: 0 on success, 2 when a bounds verdict is violated, 1 on input or
solver errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import geometry as G
from .bounds import BoundsReport, essential_bounds, lieb_lower, two_sided
from .capacity import capacity_grid, capacity_wos
from .capradius import (
    CapacityCache,
    CapacityParams,
    SearchGrid,
    capacitary_radius,
    essential_radius,
    measure_radius,
)
from .constants import ExplicitConstants, InvalidDimensionError, InvalidParameterError
from .linalg import SolverFailure
from .spectrum import EmptyDomainError, bbox_sequence, domain_eigenvalue

EXIT_OK, EXIT_ERROR, EXIT_VIOLATED = 0, 1, 2


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        f = float(o)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return o


def dumps(obj) -> str:
    return json.dumps(_clean(json.loads(json.dumps(obj, default=_json_default, allow_nan=True))),
                      sort_keys=True, indent=2)


def positive_float(text: str) -> float:
    """Float parser that also accepts fractions such as ``1/32``."""
    try:
        v = float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def unit_interval(text: str) -> float:
    v = positive_float(text)
    if not v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {text!r}")
    return v


def float_list(text: str) -> list[float]:
    try:
        return [float(Fraction(t)) for t in text.split(",") if t.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc


def int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from exc


def _bbox(values, n: int):
    if values is None:
        return None
    if len(values) != 2 * n:
        raise InvalidParameterError(f"--bbox needs {2 * n} numbers (lower corner then upper corner)")
    return np.array(values[:n]), np.array(values[n:])


# ---------------------------------------------------------------------------
# built-in suite


@dataclass
class SuiteDomain:
    name: str
    spec: G.Node
    radii: tuple
    search_bbox: tuple
    oracle: dict = field(default_factory=dict)
    spacing: float | None = None

    def search(self, h: float) -> SearchGrid:
        return SearchGrid(self.radii, self.search_bbox, h, self.spacing)


def _grid(r_min: float, r_max: float, step: float) -> tuple:
    k = int(round((r_max - r_min) / step))
    return tuple(r_min + i * step for i in range(k + 1))


def _geometric(r_min: float, r_max: float, per_octave: int = 16) -> tuple:
    k = int(np.floor(np.log2(r_max / r_min) * per_octave + 1e-9))
    return tuple(float(r_min * 2.0 ** (i / per_octave)) for i in range(k + 1))


def perforated_box() -> G.Node:
    """Box [0, 2]^3 with a 2x2x2 array of spherical holes of radius 0.2."""
    holes = G.periodic(G.ball((0.5, 0.5, 0.5), 0.2), [[1, 0, 0], [0, 1, 0], [0, 0, 1]], [2, 2, 2])
    return G.box((0, 0, 0), (2, 2, 2)) - holes


def suite_domains() -> list[SuiteDomain]:
    """Ball, cube, slab, L-shape, perforated box and two-ball union (n = 3).

    Radius grids are linear with step 1/16 where the radius is near 1 and
    geometric (16 per octave) where it is smaller, so one bisection leaves a
    relative gap of about 3% or less.  Centre lattices stay at spacing 1/16.
    """
    step = 1.0 / 16
    return [
        SuiteDomain("ball", G.ball((0, 0, 0), 1.0), _grid(0.25, 1.25, step),
                    ((-0.25,) * 3, (0.25,) * 3)),
        SuiteDomain("cube", G.box((0, 0, 0), (1, 1, 1)), _geometric(0.25, 1.0),
                    ((0.25,) * 3, (0.75,) * 3), spacing=step),
        SuiteDomain("slab", G.slab(1.0), _grid(0.5, 1.75, step),
                    ((-0.0625, -0.0625, -0.25), (0.0625, 0.0625, 0.25)),
                    {"bbox": ((-0.25, -0.25, -1.0), (0.25, 0.25, 1.0)), "periodic": (0, 1)}),
        SuiteDomain("lshape", G.union(G.box((0, 0, 0), (2, 1, 1)), G.box((0, 0, 0), (1, 2, 1))),
                    _geometric(0.25, 1.0), ((0.25, 0.25, 0.5), (1.75, 1.75, 0.5)), spacing=step),
        SuiteDomain("perforated", perforated_box(), _geometric(0.25, 1.25),
                    ((0.75,) * 3, (1.25,) * 3), spacing=step),
        SuiteDomain("twoball", G.union(G.ball((-0.75, 0, 0), 1.0), G.ball((0.75, 0, 0), 1.0)),
                    _grid(0.5, 1.5, step), ((-0.75, -0.25, -0.25), (0.75, 0.25, 0.25))),
    ]


SUMMARY_FIELDS = ["domain", "gamma", "radius", "status", "lower", "upper", "lambda", "verdict",
                  "eps_radius", "eps_capacity", "eps_eigen", "eps_total", "seconds"]


def run_suite(h: float = 1.0 / 32, gammas=(0.3, 0.5, 0.7), out_dir: str | Path | None = None,
              domains: list[SuiteDomain] | None = None, params: CapacityParams | None = None,
              log=None) -> tuple[int, dict]:
    """Sandwich check over the built-in domains.

    Returns the exit code and ``{"reports": {(domain, gamma): BoundsReport},
    "oracles": {...}, "rows": [...], "caches": {...}}``.  With ``out_dir`` one JSON file per
    report and ``summary.csv`` are written.
    """
    domains = suite_domains() if domains is None else domains
    reports, oracles, rows, caches = {}, {}, [], {}
    failed = False
    for d in domains:
        t0 = time.time()
        try:
            orc = domain_eigenvalue(d.spec, h, **d.oracle)
        except (SolverFailure, EmptyDomainError, ValueError) as exc:
            orc = None
            if log:
                log(f"{d.name}: oracle failed: {exc}")
        oracles[d.name] = orc
        t_orc = time.time() - t0
        cache = caches.setdefault(d.name, CapacityCache())
        for g in gammas:
            t1 = time.time()
            try:
                rep = two_sided(d.spec, g, d.search(h), oracle=orc, params=params, cache=cache)
            except (SolverFailure, ValueError) as exc:
                failed = True
                rows.append({"domain": d.name, "gamma": g, "verdict": f"error: {exc}"})
                continue
            secs = time.time() - t1 + (t_orc if g == gammas[0] else 0.0)
            reports[(d.name, g)] = rep
            tol = rep.tolerances
            rows.append({
                "domain": d.name, "gamma": g, "radius": rep.radius.radius, "status": rep.radius.status,
                "lower": rep.lower, "upper": rep.upper, "lambda": None if orc is None else orc.best,
                "verdict": rep.verdict, "eps_radius": tol["radius"], "eps_capacity": tol["capacity"],
                "eps_eigen": tol["eigen"], "eps_total": tol["total"], "seconds": round(secs, 2),
            })
            if log:
                log(f"{d.name} gamma={g}: r={rep.radius.radius:.5g} verdict={rep.verdict} "
                    f"eps={tol['total']:.3f} ({secs:.1f}s)")
    violated = any(r.verdict.startswith("violated") for r in reports.values())
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for (name, g), rep in reports.items():
            (out / f"{name}_gamma{g:g}.json").write_text(dumps(rep.to_json()) + "\n")
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
            w.writeheader()
            for row in rows:
                w.writerow({k: row.get(k, "") for k in SUMMARY_FIELDS})
    code = EXIT_VIOLATED if violated else (EXIT_ERROR if failed else EXIT_OK)
    return code, {"reports": reports, "oracles": oracles, "rows": rows, "caches": caches}


# ---------------------------------------------------------------------------
# subcommands


def cmd_constants(args) -> tuple[int, dict]:
    c = ExplicitConstants.evaluate(args.gamma, args.n, args.N_override)
    return EXIT_OK, c.to_dict()


def cmd_capacity(args) -> tuple[int, dict]:
    spec = G.load_domain(args.set)
    n = spec.dim or 3
    mask = G.compact_mask(spec, args.h, _bbox(args.bbox, n))
    out = {"measure": G.mask_measure(mask), "cells": mask.count}
    if args.method in ("grid", "both"):
        est, _ = capacity_grid(mask, args.outer_factor, args.tol)
        out["grid"] = est.to_json()
    if args.method in ("wos", "both"):
        out["wos"] = capacity_wos(mask, args.walks, seed=args.seed).to_json()
    return EXIT_OK, out


def cmd_eigen(args) -> tuple[int, dict]:
    spec = G.load_domain(args.domain)
    n = spec.dim or 3
    bbox = _bbox(args.bbox, n)
    periodic = args.periodic or None
    if args.bbox_scale:
        if bbox is None:
            raise InvalidParameterError("--bbox-scale needs --bbox")
        boxes = [(bbox[0] * s, bbox[1] * s) for s in args.bbox_scale]
        res, stable = bbox_sequence(spec, args.h, boxes, tol=args.tol, periodic=periodic,
                                    extrapolate=args.extrapolate)
        return EXIT_OK, {"sequence": [r.to_json() for r in res], "stabilized_index": stable}
    r = domain_eigenvalue(spec, args.h, bbox, tol=args.tol, periodic=periodic, extrapolate=args.extrapolate)
    return EXIT_OK, r.to_json()


def _search_from(args, spec) -> SearchGrid:
    n = spec.dim or 3
    bbox = _bbox(args.bbox, n)
    if bbox is None:
        b = spec.bounds()
        if b is None:
            raise InvalidParameterError("unbounded domain: give the search region with --bbox")
        bbox = (np.asarray(b[0]), np.asarray(b[1]))
    return SearchGrid.uniform(args.r_min, args.r_max, args.r_steps, bbox, args.h, args.spacing)


def _params_from(args) -> CapacityParams:
    return CapacityParams(outer_factor=args.outer_factor, top_k=args.top_k)


def cmd_radius(args) -> tuple[int, dict]:
    spec = G.load_domain(args.domain)
    search = _search_from(args, spec)
    if args.kind == "cap":
        r = capacitary_radius(spec, args.gamma, search, params=_params_from(args))
    elif args.kind == "mes":
        if args.alpha is None:
            raise InvalidParameterError("--kind mes needs --alpha")
        r = measure_radius(spec, args.alpha, search)
    else:
        if not args.R_schedule:
            raise InvalidParameterError("--kind ess needs --R-schedule")
        r = essential_radius(spec, args.gamma, args.R_schedule, search, params=_params_from(args))
    return EXIT_OK, r.to_json()


def cmd_bounds(args) -> tuple[int, dict]:
    spec = G.load_domain(args.domain)
    search = _search_from(args, spec)
    n = search.n
    oracle = None
    if args.with_oracle:
        oracle = {"bbox": _bbox(args.oracle_bbox, n), "periodic": args.periodic or None}
    if args.lieb:
        if args.alpha is None:
            raise InvalidParameterError("--lieb needs --alpha")
        rep = lieb_lower(spec, args.alpha, search, oracle=oracle)
    elif args.essential:
        if not args.R_schedule:
            raise InvalidParameterError("--essential needs --R-schedule")
        rep = essential_bounds(spec, args.gamma, args.R_schedule, search, oracle=oracle,
                               params=_params_from(args))
    else:
        rep = two_sided(spec, args.gamma, search, oracle=oracle, construction=args.construction,
                        params=_params_from(args))
    code = EXIT_VIOLATED if rep.verdict.startswith("violated") else EXIT_OK
    return code, rep.to_json()


def cmd_suite(args) -> tuple[int, dict]:
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    code, bundle = run_suite(args.h, tuple(args.gammas), args.out_dir, log=log)
    if args.format == "csv":
        return code, {"_csv": bundle["rows"]}
    reports = {f"{k[0]}_gamma{k[1]:g}": v.to_json() for k, v in bundle["reports"].items()}
    return code, {"summary": bundle["rows"], "reports": reports,
                  "all_pass": code == EXIT_OK}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", help="write the report here instead of stdout")
    p = argparse.ArgumentParser(prog="capdrum", description="Capacitary radius and eigenvalue bounds.")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    c = add("constants", help="explicit constants for (n, gamma)")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--gamma", type=unit_interval, required=True)
    c.add_argument("--N-override", dest="N_override", type=int, default=None)
    c.set_defaults(func=cmd_constants)

    c = add("capacity", help="capacity of a compact set given as a domain spec")
    c.add_argument("--set", required=True, help="JSON domain spec of the compact set")
    c.add_argument("--h", type=positive_float, required=True)
    c.add_argument("--method", choices=("grid", "wos", "both"), default="grid")
    c.add_argument("--outer-factor", type=positive_float, default=8.0)
    c.add_argument("--walks", type=int, default=100000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=positive_float, default=1e-8)
    c.add_argument("--bbox", type=float_list, default=None)
    c.set_defaults(func=cmd_capacity)

    c = add("eigen", help="finite-difference oracle for the lowest Dirichlet eigenvalue")
    c.add_argument("--domain", required=True)
    c.add_argument("--h", type=positive_float, required=True)
    c.add_argument("--tol", type=positive_float, default=1e-6)
    c.add_argument("--bbox", type=float_list, default=None)
    c.add_argument("--extrapolate", action="store_true")
    c.add_argument("--periodic", type=int_list, default=None, help="periodic axes, e.g. 0,1")
    c.add_argument("--bbox-scale", type=float_list, default=None,
                   help="growing bbox sequence: multiples of --bbox")
    c.set_defaults(func=cmd_eigen)

    def search_flags(c, gamma_required=True):
        c.add_argument("--domain", required=True)
        c.add_argument("--h", type=positive_float, required=True)
        c.add_argument("--gamma", type=unit_interval, required=gamma_required, default=None)
        c.add_argument("--alpha", type=unit_interval, default=None)
        c.add_argument("--r-min", type=positive_float, default=0.25)
        c.add_argument("--r-max", type=positive_float, default=2.0)
        c.add_argument("--r-steps", type=int, default=8)
        c.add_argument("--bbox", type=float_list, default=None, help="search region for centres")
        c.add_argument("--spacing", type=positive_float, default=None, help="centre lattice spacing")
        c.add_argument("--R-schedule", dest="R_schedule", type=float_list, default=None)
        c.add_argument("--outer-factor", type=positive_float, default=8.0)
        c.add_argument("--top-k", type=int, default=4)

    c = add("radius", help="capacitary, measure or essential radius")
    search_flags(c, gamma_required=False)
    c.add_argument("--kind", choices=("cap", "mes", "ess"), default="cap")
    c.set_defaults(func=cmd_radius)

    c = add("bounds", help="two-sided, Lieb-type or essential-spectrum bounds")
    search_flags(c, gamma_required=False)
    c.add_argument("--with-oracle", action="store_true")
    c.add_argument("--oracle-bbox", type=float_list, default=None)
    c.add_argument("--periodic", type=int_list, default=None)
    c.add_argument("--lieb", action="store_true")
    c.add_argument("--essential", action="store_true")
    c.add_argument("--construction", action="store_true", help="add the cutoff test-function quotient")
    c.set_defaults(func=cmd_bounds)

    c = add("suite", help="sandwich check on the built-in domains")
    c.add_argument("--h", type=positive_float, default=1.0 / 32)
    c.add_argument("--gammas", type=float_list, default=[0.3, 0.5, 0.7])
    c.add_argument("--out-dir", default=None)
    c.add_argument("--format", choices=("json", "csv"), default="json")
    c.add_argument("--verbose", "-v", action="store_true")
    c.set_defaults(func=cmd_suite)
    return p


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


LIST_FLAGS = ("--bbox", "--oracle-bbox", "--R-schedule", "--gammas", "--bbox-scale", "--periodic")


def _glue_lists(argv):
    """Let list flags take values with a leading minus, e.g. ``--bbox -1,-1,-1,1,1,1``."""
    out, it = [], iter(argv)
    for tok in it:
        if tok in LIST_FLAGS:
            val = next(it, None)
            out.append(tok if val is None else f"{tok}={val}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_glue_lists(sys.argv[1:] if argv is None else list(argv)))
    if args.subcommand in ("radius", "bounds") and args.gamma is None and not (
            args.subcommand == "radius" and args.kind == "mes" or args.subcommand == "bounds" and args.lieb):
        parser.error("--gamma is required")
    try:
        code, result = args.func(args)
    except G.DomainParseError as exc:
        print(f"capdrum: invalid domain spec: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, json.JSONDecodeError) as exc:
        print(f"capdrum: cannot read input: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (InvalidParameterError, InvalidDimensionError, G.ResourceLimitError, EmptyDomainError,
            SolverFailure, ValueError) as exc:
        print(f"capdrum: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if "_csv" in result:
        fh = open(args.output, "w", newline="") if args.output else sys.stdout
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for row in result["_csv"]:
            w.writerow({k: row.get(k, "") for k in SUMMARY_FIELDS})
        if args.output:
            fh.close()
        return code
    text = dumps({"config": _config(args), "result": result})
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
