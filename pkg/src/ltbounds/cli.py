"""Command-line entry point.

Subcommands
-----------
estimate     point estimands (naive / LU / ECB / NSD) plus closed-form bounds
bounds       worst-case and completion-based intervals with the bracketing check
sharp-set    LP-based sharp interval under a chosen restriction set
test         max-t specification tests (outcome ordering, design transfer)
dml          cross-fitted debiased estimate with confidence interval
sensitivity  deviation curve for the scaled-martingale relaxation
simulate     draw a combined dataset from a latent-panel generator
jobsearch    solve the search-effort model and recover the training effect

Exit codes: 0 success, 2 usage or malformed configuration, 3 data or
feasibility error (the message names the offending cell or constraint).

Reports are canonical JSON (sorted keys, two-space indent, trailing
newline) so a fixed config and input always produce byte-identical
output.  Wall-clock time goes to stderr, never into the report.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time

import numpy as np

from . import __version__
from .closed_form import (DegenerateDenominator, EqualElasticities,
                          bracketing_report, fh_atets_bounds, full_report,
                          sensitivity_delta, worstcase_atets_bounds)
from .data import DataError, RestrictionSet, ingest, tabulate
from .dml import dml_estimate
from .jobsearch import (JobSearchModel, NoRoot, NonConvergence, ROffGrid,
                        foc_residuals, hazards, recover_theta, solve_effort)
from .lp import NumericalBreakdown
from .moments import (MissingInstrument, ZeroVariance, external_validity_moments,
                      fosd_moments, run_test)
from .oracle import NoFeasiblePoint
from .qspace import SolverOptions, build_program
from .simlab import (DeltaSpec, DiscreteLaw, EmptyStratum, GaussianLaw,
                     OutcomeConfig, SelectionConfig, assemble, diagnose,
                     diagnose_population, gen_panel, select)
from .solver import DenominatorVanishes, Infeasible, solve_bounds

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

# Raised by the library when the input is internally inconsistent or a
# requested object does not exist: these map to exit code 3.
_DATA_ERRORS = (DataError, Infeasible, DenominatorVanishes, NoFeasiblePoint,
                DegenerateDenominator, EqualElasticities, ZeroVariance,
                MissingInstrument, NonConvergence, ROffGrid, NoRoot,
                NumericalBreakdown, EmptyStratum)


# ---------------------------------------------------------------------
# report plumbing


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _render(config: dict, seed, results: dict) -> str:
    payload = {"version": __version__, "config": _jsonable(config),
               "seed": seed, "results": _jsonable(results)}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _emit(text: str, output) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        with open(output, "w") as fh:
            fh.write(text)


def _load_dataset(path: str, n_cells: int, extra_columns=()):
    with open(path, newline="") as fh:
        return ingest(fh, n_cells, extra_columns=extra_columns)


def _parse_rho_bars(raw: str):
    try:
        return tuple(float(tok) for tok in raw.split(",") if tok.strip() != "")
    except ValueError:
        raise ValueError(f"--rho-bars must be comma-separated floats, got {raw!r}")


def _bounds_dict(b) -> dict:
    return {"lower": b.lower, "upper": b.upper, "informative": b.informative,
            "status": b.status, "components": b.components,
            "binding_constraints": list(b.binding_constraints),
            "profiling_points_used": b.profiling_points_used}


# ---------------------------------------------------------------------
# estimate / bounds / sensitivity


def _markdown_estimates(report: dict, config: dict) -> str:
    est = report["estimands"]
    fh_b = report["bounds"]["fh"]
    wc = report["bounds"]["worstcase"]
    lines = [
        "# Long-term effect report",
        "",
        "| Naive | LU | ECB | bounds |",
        "| ---: | ---: | ---: | :---: |",
        "| {:.6f} | {:.6f} | {:.6f} | [{:.6f}, {:.6f}] |".format(
            est["naive"], est["lu_att"], est["ecb_att"],
            fh_b["lower"], fh_b["upper"]),
        "",
        "NSD point estimate: {:.6f}".format(est["nsd_atets"]),
        "Worst-case interval: [{:.6f}, {:.6f}] (informative: {})".format(
            wc["lower"], wc["upper"], "yes" if wc["informative"] else "no"),
        "",
        "version: {}".format(__version__),
        "input: {}".format(config["input"]),
        "cells: {}".format(config["cells"]),
        "",
    ]
    return "\n".join(lines)


def cmd_estimate(args) -> int:
    config = {"command": "estimate", "input": args.input, "cells": args.cells,
              "rho_bars": list(_parse_rho_bars(args.rho_bars)),
              "tau_ade": args.tau_ade, "kappa_d": args.kappa_d,
              "kappa_s": args.kappa_s, "format": args.format}
    ds = _load_dataset(args.input, args.cells)
    ct = tabulate(ds)
    report = full_report(ct, rho_bars=tuple(config["rho_bars"]),
                         tau_ade=args.tau_ade, kappa_d=args.kappa_d,
                         kappa_s=args.kappa_s)
    if args.format == "markdown":
        _emit(_markdown_estimates(report, config), args.output)
    else:
        _emit(_render(config, None, report), args.output)
    return EXIT_OK


def cmd_bounds(args) -> int:
    config = {"command": "bounds", "input": args.input, "cells": args.cells}
    ds = _load_dataset(args.input, args.cells)
    ct = tabulate(ds)
    br = bracketing_report(ct)
    results = {
        "worstcase": _bounds_dict(worstcase_atets_bounds(ct)),
        "fh": _bounds_dict(fh_atets_bounds(ct)),
        "bracketing": {"theta_lu": br.theta_lu, "theta_ecb": br.theta_ecb,
                       "psi_curve": list(br.psi_curve), "nep_ok": br.nep_ok,
                       "fosd_margins": list(br.fosd_margins),
                       "fosd_ok": br.fosd_ok, "bracket_ok": br.bracket_ok,
                       "reversed_bracketing": br.reversed_bracketing},
    }
    _emit(_render(config, None, results), args.output)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    rhos = _parse_rho_bars(args.rho_bars)
    config = {"command": "sensitivity", "input": args.input,
              "cells": args.cells, "rho_bars": list(rhos)}
    ds = _load_dataset(args.input, args.cells)
    ct = tabulate(ds)
    curve = []
    for rho in rhos:
        s = sensitivity_delta(ct, rho)
        curve.append({"rho_bar": s.rho_bar, "delta": s.delta,
                      "adjusted_ecb": s.adjusted_ecb})
    _emit(_render(config, None, {"curve": curve}), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------
# sharp-set


_RESTRICTION_FLAGS = ("iv", "ev", "lu", "mtr", "sd", "st", "pco")


def cmd_sharp_set(args) -> int:
    restrictions = RestrictionSet(**{name: bool(getattr(args, name))
                                     for name in _RESTRICTION_FLAGS})
    opts = SolverOptions(lp_tol=args.lp_tol, grid_points=args.grid_points,
                         max_profile_dims=args.max_profile_dims,
                         multi_start=args.multi_start, seed=args.seed)
    config = {"command": "sharp-set", "input": args.input, "cells": args.cells,
              "restrictions": list(restrictions.names()),
              "grid_points": opts.grid_points,
              "max_profile_dims": opts.max_profile_dims,
              "multi_start": opts.multi_start, "lp_tol": opts.lp_tol}
    ds = _load_dataset(args.input, args.cells)
    ct = tabulate(ds)
    program = build_program(ct, restrictions)
    try:
        res = solve_bounds(program, opts)
    except Infeasible as exc:
        results = {"status": "infeasible", "message": str(exc),
                   "certificate": _jsonable(exc.certificate)}
        _emit(_render(config, args.seed, results), args.output)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    _emit(_render(config, args.seed, _bounds_dict(res)), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------
# test / dml


def cmd_test(args) -> int:
    config = {"command": "test", "input": args.input, "cells": args.cells,
              "which": args.which, "assumption": args.assumption,
              "alpha": args.alpha, "boot": args.boot,
              "instrument_column": args.instrument_column}
    extras = (args.instrument_column,) if args.instrument_column else ()
    loaded = _load_dataset(args.input, args.cells, extra_columns=extras)
    if extras:
        ds, extra_cols = loaded
        v_column = extra_cols[args.instrument_column]
    else:
        ds, v_column = loaded, None
    if args.which == "fosd":
        m = fosd_moments(ds)
    else:
        m = external_validity_moments(ds, assumption=args.assumption,
                                      v_column=v_column)
    res = run_test(m, alpha=args.alpha, b=args.boot, seed=args.seed)
    results = {"statistic": res.statistic, "critical_value": res.critical_value,
               "p_value": res.p_value, "reject": res.reject,
               "alpha": res.alpha, "b": res.b, "n": m.n,
               "moment_labels": list(m.labels),
               "moment_means": [float(v) for v in m.column_means()]}
    _emit(_render(config, args.seed, results), args.output)
    return EXIT_OK


def cmd_dml(args) -> int:
    config = {"command": "dml", "input": args.input, "cells": args.cells,
              "folds": args.folds, "alpha": args.alpha}
    ds = _load_dataset(args.input, args.cells)
    res = dml_estimate(ds, k=args.folds, alpha=args.alpha, seed=args.seed)
    results = {"tau_hat": res.tau_hat, "se": res.se,
               "ci": [res.ci[0], res.ci[1]], "folds": res.k,
               "fold_estimates": list(res.fold_estimates),
               "alpha": res.alpha, "n": res.n}
    _emit(_render(config, args.seed, results), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------
# simulate


def _law_from_json(node: dict):
    kind = node.get("type")
    if kind == "discrete":
        return DiscreteLaw(tuple(float(v) for v in node["values"]),
                           tuple(float(p) for p in node["probs"]))
    if kind == "gaussian":
        return GaussianLaw(float(node["mean"]), float(node["sd"]))
    raise ValueError(f"unknown law type {kind!r} (expected discrete or gaussian)")


def _delta_from_json(node) -> DeltaSpec:
    if node is None:
        return DeltaSpec()
    kind = node.get("kind", "constant")
    if kind == "constant":
        return DeltaSpec(kind="constant", d1=float(node.get("d1", 0.0)),
                         d2=float(node.get("d2", 0.0)))
    if kind == "joint":
        pairs = tuple((float(a), float(b)) for a, b in node["pairs"])
        return DeltaSpec(kind="joint", pairs=pairs,
                         probs=tuple(float(p) for p in node["probs"]))
    raise ValueError(f"unknown delta kind {kind!r}")


def outcome_from_json(node: dict) -> OutcomeConfig:
    return OutcomeConfig(alpha_law=_law_from_json(node["alpha"]),
                         lambda1=float(node["lambda1"]),
                         lambda2=float(node["lambda2"]),
                         eps_law=_law_from_json(node["eps"]),
                         delta=_delta_from_json(node.get("delta")),
                         threshold=float(node.get("threshold", 0.0)))


def selection_from_json(node: dict) -> SelectionConfig:
    table = node.get("table")
    if table is not None:
        table = tuple(((float(pair[0]), float(pair[1])), int(wv))
                      for pair, wv in table)
    return SelectionConfig(mechanism=node["mechanism"],
                           beta=float(node.get("beta", 0.0)),
                           c=float(node.get("c", 0.0)),
                           a=float(node.get("a", 1.0)),
                           b=float(node.get("b", 1.0)),
                           table=table)


def _write_csv(ds, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y2", "y1", "w", "x", "g"])
        for obs in ds.rows():
            y2 = "" if obs.y2 is None else obs.y2
            writer.writerow([y2, obs.y1, obs.w, obs.x, obs.g])


def _diag_dict(diag) -> dict:
    return _jsonable(dataclasses.asdict(diag))


def cmd_simulate(args) -> int:
    with open(args.config) as fh:
        cfg_json = json.load(fh)
    outcome = outcome_from_json(cfg_json["outcome"])
    selection = selection_from_json(cfg_json["selection"])
    n = int(cfg_json["n"])
    share_e = float(cfg_json["share_e"])
    seed = int(cfg_json.get("seed", 0))

    panel = select(gen_panel(outcome, n, seed=seed), selection)
    ds = assemble(panel, share_e, seed=seed + 1)
    _write_csv(ds, args.output_csv)

    results = {"n": ds.n, "n_e": ds.n_e, "n_o": ds.n_o,
               "treated_share_o": float(ds.w[ds.is_o].mean()) if ds.n_o else None,
               "sample_diagnostics": _diag_dict(diagnose(panel))}
    discrete = (isinstance(outcome.alpha_law, DiscreteLaw)
                and isinstance(outcome.eps_law, DiscreteLaw))
    results["population_diagnostics"] = (
        _diag_dict(diagnose_population(outcome, selection)) if discrete else None)
    _emit(_render(cfg_json, seed, results), args.output_diagnostics)
    return EXIT_OK


# ---------------------------------------------------------------------
# jobsearch


_MODEL_FIELDS = ("w_low", "w_bar", "m", "r", "delta", "lam", "theta", "omega",
                 "c0", "b", "beta_a", "beta_b", "f_values")


def cmd_jobsearch(args) -> int:
    with open(args.config) as fh:
        cfg_json = json.load(fh)
    kwargs = {k: cfg_json[k] for k in _MODEL_FIELDS if k in cfg_json}
    if kwargs.get("f_values") is not None:
        kwargs["f_values"] = tuple(float(v) for v in kwargs["f_values"])
    model = JobSearchModel(**kwargs)
    s = solve_effort(model)
    d, d_u = hazards(model, s)
    results = {"grid": [float(v) for v in model.grid],
               "s": [float(v) for v in s],
               "d": [float(v) for v in d],
               "d_u": float(d_u),
               "max_foc_residual": float(np.max(np.abs(foc_residuals(model, s)))),
               "theta_hat": None}
    recover = cfg_json.get("recover")
    if recover is not None:
        base = dataclasses.replace(model, theta=0.0, omega=0)
        results["theta_hat"] = recover_theta(
            float(recover["d_u_control"]), float(recover["d_u_treated"]),
            base, theta_max=float(recover.get("theta_max", 5.0)))
    _emit(_render(cfg_json, None, results), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------
# parser


def _add_input_flags(sub):
    sub.add_argument("--input", required=True, help="CSV with header y2,y1,w,x,g")
    sub.add_argument("--cells", type=int, default=1,
                     help="number of covariate cells (x in 0..cells-1)")
    sub.add_argument("--output", default=None,
                     help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltbounds",
        description="Long-term effect estimation from combined short- and "
                    "long-horizon samples.",
        epilog="Set LTBOUNDS_MAX_WORKERS to cap worker threads.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("estimate", help="point estimands and closed-form bounds")
    _add_input_flags(p)
    p.add_argument("--rho-bars", default="0,0.5,1,1.5,2")
    p.add_argument("--tau-ade", type=float, default=None)
    p.add_argument("--kappa-d", type=float, default=None)
    p.add_argument("--kappa-s", type=float, default=None)
    p.add_argument("--format", choices=("json", "markdown"), default="json")
    p.set_defaults(func=cmd_estimate)

    p = subs.add_parser("bounds", help="worst-case and completion intervals")
    _add_input_flags(p)
    p.set_defaults(func=cmd_bounds)

    p = subs.add_parser("sharp-set", help="LP sharp interval under restrictions")
    _add_input_flags(p)
    for name in _RESTRICTION_FLAGS:
        p.add_argument(f"--{name}", action="store_true",
                       help=f"impose the {name.upper()} restriction")
    p.add_argument("--grid-points", type=int, default=21)
    p.add_argument("--max-profile-dims", type=int, default=8)
    p.add_argument("--multi-start", type=int, default=32)
    p.add_argument("--lp-tol", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sharp_set)

    p = subs.add_parser("test", help="max-t specification tests")
    _add_input_flags(p)
    p.add_argument("--which", choices=("fosd", "external-validity"),
                   required=True)
    p.add_argument("--assumption",
                   choices=("none", "sd", "lqd", "sdl", "het", "ex", "miv"),
                   default="none")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--boot", type=int, default=1000,
                   help="multiplier bootstrap draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instrument-column", default=None,
                   help="name of an extra integer CSV column used by ex/miv")
    p.set_defaults(func=cmd_test)

    p = subs.add_parser("dml", help="cross-fitted debiased estimate")
    _add_input_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dml)

    p = subs.add_parser("sensitivity", help="scaled-martingale deviation curve")
    _add_input_flags(p)
    p.add_argument("--rho-bars", default="0,0.5,1,1.5,2")
    p.set_defaults(func=cmd_sensitivity)

    p = subs.add_parser("simulate", help="draw a combined dataset from a DGP")
    p.add_argument("--config", required=True, help="JSON generator config")
    p.add_argument("--output-csv", required=True)
    p.add_argument("--output-diagnostics", default=None,
                   help="diagnostics JSON (stdout when omitted)")
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("jobsearch", help="search-effort model solver")
    p.add_argument("--config", required=True, help="JSON model config")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_jobsearch)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    start = time.monotonic()
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        elapsed = time.monotonic() - start
        print(f"wall-clock seconds: {elapsed:.3f}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
