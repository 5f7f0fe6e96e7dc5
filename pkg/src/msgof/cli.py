"""Command-line surface: data simulation, model fitting, goodness-of-fit
testing, simulation studies, and extremal-coefficient curve export.

Exit codes: 0 success, 2 validation error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, io, models, study
from .fit import PairSet, fit_model
from .gof import StatisticSpec, bootstrap_suite
from .pickands import EstimatorKind
from .ranks import pseudo_observations
from .simulate import SimConfig, simulate_model
from .types import (
    NumericalError,
    SchlatherParams,
    SmithParams,
    ValidationError,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _require_file(path) -> Path:
    # referenced input files must exist at validation time
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"input file not found: {path}")
    return path


def _parse_params(kind: str, text: str):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise ValidationError(f"could not parse parameters {text!r}") from exc
    if kind == "smith":
        if len(parts) != 3:
            raise ValidationError("smith parameters are s11,s12,s22")
        return SmithParams(*parts)
    if kind == "schlather":
        if len(parts) != 3:
            raise ValidationError("schlather parameters are c,phi,r")
        return SchlatherParams(*parts)
    raise ValidationError(f"unknown model {kind!r}")


def _cmd_simulate(args) -> int:
    sites = io.read_sites(_require_file(args.sites))
    params = _parse_params(args.model, args.params)
    cfg = SimConfig(seed=args.seed, stream_id=args.stream)
    panel = simulate_model(sites, params, args.n, cfg)
    io.write_panel(panel, args.out)
    io.write_json({
        "command": "simulate", "model": args.model, "params": params.to_dict(),
        "seed": args.seed, "stream": args.stream, "n": args.n, "d": sites.d,
        "sites": str(args.sites), "msgof_version": __version__,
    }, str(args.out) + ".meta.json")
    return EXIT_OK


def _warn_on_ties(panel) -> None:
    for j in range(panel.d):
        col = panel.values[:, j]
        if np.unique(col).size < col.size:
            warnings.warn("tied values detected; average ranks are used for "
                          "the pseudo-observations", RuntimeWarning)
            return


def _cmd_fit(args) -> int:
    sites = io.read_sites(_require_file(args.sites))
    panel = io.read_panel(_require_file(args.panel), sites)
    _warn_on_ties(panel)
    pairs = PairSet.within_distance(sites, args.max_dist) if args.max_dist else None
    result = fit_model(pseudo_observations(panel), args.model, sites, pairs=pairs)
    io.write_json({
        "command": "fit", "model": args.model, "params": result.params.to_dict(),
        "objective": result.objective, "converged": result.converged,
        "n_evaluations": result.n_evaluations, "n": panel.n, "d": panel.d,
        "pair_cutoff": args.max_dist, "msgof_version": __version__,
    }, args.out)
    return EXIT_OK


def _cmd_test(args) -> int:
    sites = io.read_sites(_require_file(args.sites))
    panel = io.read_panel(_require_file(args.panel), sites)
    _warn_on_ties(panel)
    null_xi = "simulated" if args.bootstrap == "two" else "closed_form"
    statistic = "pairwise_sum" if args.statistic == "pairwise" else "global"
    estimators = list(EstimatorKind) if args.estimator == "all" else [EstimatorKind(args.estimator)]
    specs = [StatisticSpec(kind=statistic, estimator=e, null_xi=null_xi,
                           gamma=args.gamma, min_dist=args.min_dist) for e in estimators]
    pairs = PairSet.within_distance(sites, args.max_dist) if args.max_dist else None
    reports = bootstrap_suite(panel, args.model, sites, specs, N=args.N, seed=args.seed,
                              pairs=pairs, m_override=args.m, workers=args.workers,
                              smoothed=args.smoothed)
    payload = reports[0].to_dict() if len(reports) == 1 else {
        "schema_version": 1, "reports": [r.to_dict() for r in reports]}
    io.write_json(payload, args.out)
    if args.replicates_csv:
        with Path(args.replicates_csv).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replicate"] + [r.spec.estimator.value for r in reports])
            for i in range(len(reports[0].replicate_stats)):
                writer.writerow([i + 1] + [repr(float(r.replicate_stats[i])) for r in reports])
    for r in reports:
        print(f"{args.model} {statistic} {r.spec.estimator.value}: "
              f"S = {r.statistic:.6g}, p = {r.p_value:.4f} "
              f"(N = {r.n_bootstrap}, failed = {r.n_failed})")
    return EXIT_OK


def _cmd_study(args) -> int:
    config = io.read_json(_require_file(args.config))
    results = study.run_study(config, args.out, master_seed=args.seed,
                              workers=args.workers, base_dir=Path(args.config).parent)
    print(f"study results written to {results}")
    return EXIT_OK


def _cmd_curves(args) -> int:
    which = ["smith", "schlather"] if args.model == "both" else [args.model]
    smith = _parse_params("smith", args.smith_params) if "smith" in which else None
    schla = _parse_params("schlather", args.schlather_params) if "schlather" in which else None
    dists = np.linspace(0.0, args.max_dist, args.steps)[1:]
    angles = [float(a) for a in args.angles.split(",")]
    rows = []
    for ang in angles:
        direction = np.array([np.cos(np.deg2rad(ang)), np.sin(np.deg2rad(ang))])
        for h in dists:
            vec = h * direction
            if smith is not None:
                a = float(np.sqrt(vec @ np.linalg.inv(smith.matrix) @ vec))
                rows.append(("smith", ang, h, 2.0 * models.smith_pair_pickands(0.5, a)))
            if schla is not None:
                rho = models.schlather_correlation(vec, schla)
                rows.append(("schlather", ang, h,
                             models.schlather_pair_extremal_coefficient(rho)))
    with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "angle_deg", "distance", "extremal_coefficient"])
        for row in rows:
            writer.writerow([row[0], repr(row[1]), repr(float(row[2])), repr(float(row[3]))])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msgof", description=__doc__)
    parser.add_argument("--version", action="version", version=f"msgof {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a block-maxima panel from a model")
    p.add_argument("--model", required=True, choices=["smith", "schlather"])
    p.add_argument("--params", required=True, help="smith: s11,s12,s22; schlather: c,phi,r")
    p.add_argument("--sites", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit a model by composite pseudo-likelihood")
    p.add_argument("--model", required=True, choices=["smith", "schlather"])
    p.add_argument("--sites", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--max-dist", type=float, default=None,
                   help="only use site pairs within this distance")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("test", help="goodness-of-fit test with bootstrap p-value")
    p.add_argument("--model", required=True, choices=["smith", "schlather"])
    p.add_argument("--bootstrap", required=True, choices=["one", "two"])
    p.add_argument("--statistic", default="global", choices=["global", "pairwise"])
    p.add_argument("--estimator", default="CFG", choices=["P", "HT", "CFG", "all"])
    p.add_argument("--N", type=int, default=1000, help="bootstrap replicates")
    p.add_argument("--m", type=int, default=None, help="second-level sample size")
    p.add_argument("--gamma", type=float, default=None, help="second-level m = floor(gamma n)")
    p.add_argument("--min-dist", type=float, default=0.0,
                   help="pairwise statistic: keep pairs at distance >= this")
    p.add_argument("--max-dist", type=float, default=None,
                   help="composite likelihood: only pairs within this distance")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="parallel bootstrap workers (default: all cores)")
    p.add_argument("--smoothed", action="store_true",
                   help="use the (count+1)/(N+1) p-value variant")
    p.add_argument("--sites", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--replicates-csv", default=None,
                   help="also dump replicate statistics as CSV")
    p.set_defaults(func=_cmd_test)

    p = sub.add_parser("study", help="run a simulation-study grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="parallel replications per cell (default: all cores)")
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("curves", help="export pairwise extremal-coefficient curves")
    p.add_argument("--model", default="both", choices=["smith", "schlather", "both"])
    p.add_argument("--smith-params", default="4,2,4")
    p.add_argument("--schlather-params", default="8,0.7853981633974483,0.5773502691896258")
    p.add_argument("--max-dist", type=float, default=10.0)
    p.add_argument("--steps", type=int, default=101)
    p.add_argument("--angles", default="0,45,90,135", help="directions in degrees")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
