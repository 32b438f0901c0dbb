"""Command-line interface.

Subcommands
-----------
fit        fit a parametric model to a survey CSV (MHDE and weighted MLE)
simulate   run a Monte-Carlo scenario from a JSON config
coverage   run a CI coverage scenario (replications >= 1000)
influence  population-level alpha-influence curves for MHDE and MLE
report     re-render a result CSV as an aligned text table

Exit codes: 0 success, 2 schema/input error, 3 convergence failure, 4 I/O
error.  Every output file embeds the resolved configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import ConvergenceError, SchemaError, SvymhdeError
from .designs import kish_neff, read_sample_csv
from .families import get_family
from .kde import get_kernel
from .mhde import MhdeOptions, fit as mhde_fit
from .inference import confint, population_stats, sandwich
from .robustness import alpha_curve
from . import simlab

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4

_JOBS_ENV = "SVYMHDE_JOBS"


def _default_jobs() -> int:
    raw = os.environ.get(_JOBS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _float_list(text: str):
    """Parse '0,0.1,0.2' or 'start:stop:step' into a float list."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3:
            raise SchemaError(f"grid spec {text!r}: expected start:stop:step")
        start, stop, step = parts
        if step <= 0:
            raise SchemaError("grid step must be positive")
        count = int(round((stop - start) / step))
        return [start + i * step for i in range(count + 1)]
    return [float(p) for p in text.split(",") if p.strip()]


def _write_json_mirror(path_csv: str, payload: dict):
    path = os.path.splitext(path_csv)[0] + ".json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svymhde", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"svymhde {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model to survey data from CSV")
    fit.add_argument("input", help="CSV with columns y and exactly one of weight|pi")
    fit.add_argument("--family", default="gamma", choices=["gamma", "weibull", "lognormal"])
    fit.add_argument("--ci-level", type=float, default=0.95)
    fit.add_argument("--mc-draws", type=int, default=10_000)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--kernel", default="gaussian", choices=["gaussian", "epanechnikov"])
    fit.add_argument("--bandwidth", default="auto",
                     help="numeric bandwidth or 'auto' (Silverman/Kish rule)")
    fit.add_argument("--subdivisions", type=int, default=200)
    fit.add_argument("--support-padding", type=float, default=0.0,
                     help="extra grid span per side, as a fraction of the support width")
    fit.add_argument("--output", help="prefix for CSV + JSON result files")

    for name in ("simulate", "coverage"):
        sp = sub.add_parser(name, help=f"run a {name} scenario from a JSON config")
        sp.add_argument("config", help="scenario config (JSON)")
        sp.add_argument("--output", required=True, help="output path prefix")
        sp.add_argument("--jobs", type=int, default=_default_jobs())
        sp.add_argument("--full", action="store_true",
                        help="use the large population grid (1e6..1e8)")

    infl = sub.add_parser("influence", help="alpha-influence curves (MHDE vs MLE)")
    infl.add_argument("--family", default="gamma", choices=["gamma", "weibull", "lognormal"])
    infl.add_argument("--theta0", required=True, help="true parameters, e.g. '2,35000'")
    group = infl.add_mutually_exclusive_group(required=True)
    group.add_argument("--z", type=float, help="contamination location")
    group.add_argument("--quantile", type=float, help="location as a model quantile p")
    infl.add_argument("--eps-grid", default="0:0.3:0.05",
                      help="contamination fractions: list or start:stop:step")
    infl.add_argument("--mechanism", default="point_normal",
                      choices=["point_normal", "trunc_t"])
    infl.add_argument("--output", required=True, help="output CSV path")

    rep = sub.add_parser("report", help="render a result CSV as a text table")
    rep.add_argument("input", help="result CSV produced by simulate/coverage")
    return p


def cmd_fit(args) -> int:
    sample, _aux = read_sample_csv(args.input)
    family = get_family(args.family)
    bandwidth = None if args.bandwidth == "auto" else float(args.bandwidth)
    opts = MhdeOptions(grid_subdivisions=args.subdivisions,
                       support_padding=args.support_padding)
    rng = np.random.default_rng(args.seed)

    fit = mhde_fit(sample, family, opts, kernel=get_kernel(args.kernel), bandwidth=bandwidth)
    parts = sandwich(fit, sample, family, plug_in="kde")
    ci = confint(fit, parts, args.ci_level)
    stats = population_stats(fit, parts, family, draws=args.mc_draws, rng=rng,
                             level=args.ci_level)
    theta_mle = family.weighted_mle(sample.y, sample.weight)
    neff = kish_neff(sample.weight)
    se = np.sqrt(np.diag(parts.scaled_covariance()))

    pct = int(round(100 * args.ci_level))
    lines = [
        f"family: {family.family_id}    n={sample.n}    Kish n_eff={neff:.1f}",
        f"squared Hellinger distance: {fit.hellinger_sq:.6f}"
        f"    (affinity {fit.affinity:.6f}, converged={fit.converged})",
        "",
        f"{'parameter':<12}{'MHDE':>14}{'SE':>12}"
        f"{f'{pct}% CI':>28}{'MLE':>14}",
    ]
    for j, pname in enumerate(family.param_names):
        ci_str = f"[{ci.lower[j]:.6g}, {ci.upper[j]:.6g}]"
        lines.append(
            f"{pname:<12}{fit.theta_hat[j]:>14.6g}{se[j]:>12.3g}{ci_str:>28}{theta_mle[j]:>14.6g}"
        )
    lines += [
        "",
        f"population mean   (MHDE): {stats.mean:.6g}  "
        f"[{stats.mean_ci[0]:.6g}, {stats.mean_ci[1]:.6g}]",
        f"population median (MHDE): {stats.median:.6g}  "
        f"[{stats.median_ci[0]:.6g}, {stats.median_ci[1]:.6g}]",
        f"population mean   (MLE):  {family.mean(theta_mle):.6g}",
        f"population median (MLE):  {family.median(theta_mle):.6g}",
    ]
    print("\n".join(lines))

    if args.output:
        payload = {
            "config": {
                "command": "fit",
                "input": args.input,
                "family": args.family,
                "ci_level": args.ci_level,
                "mc_draws": args.mc_draws,
                "seed": args.seed,
                "kernel": args.kernel,
                "bandwidth": args.bandwidth,
                "subdivisions": args.subdivisions,
                "support_padding": args.support_padding,
            },
            "n": sample.n,
            "kish_neff": neff,
            "mhde": {
                "theta": fit.theta_hat,
                "se": se,
                "ci_lower": ci.lower,
                "ci_upper": ci.upper,
                "hellinger_sq": fit.hellinger_sq,
                "affinity": fit.affinity,
                "converged": fit.converged,
                "mean": stats.mean,
                "mean_ci": list(stats.mean_ci),
                "median": stats.median,
                "median_ci": list(stats.median_ci),
            },
            "mle": {
                "theta": theta_mle,
                "mean": family.mean(theta_mle),
                "median": family.median(theta_mle),
            },
        }
        csv_path = args.output + ".csv"
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("# svymhde-fit v1 config=%s\n" % json.dumps(payload["config"], sort_keys=True))
            fh.write("estimator,parameter,estimate,se,ci_lower,ci_upper\n")
            for j, pname in enumerate(family.param_names):
                fh.write(
                    f"mhde,{pname},{float(fit.theta_hat[j])!r},{float(se[j])!r},"
                    f"{float(ci.lower[j])!r},{float(ci.upper[j])!r}\n"
                )
            for j, pname in enumerate(family.param_names):
                fh.write(f"mle,{pname},{float(theta_mle[j])!r},,,\n")
        _write_json_mirror(csv_path, payload)
        print(f"\nwrote {csv_path} and JSON mirror")
    return EXIT_OK


def _load_scenario(args) -> simlab.ScenarioConfig:
    cfg = simlab.ScenarioConfig.from_json(args.config)
    if args.full:
        cfg = simlab.ScenarioConfig.from_dict(
            {**cfg.to_dict(), "N_grid": [10**6, 10**7, 10**8]}
        )
    return cfg


def cmd_simulate(args, coverage: bool = False) -> int:
    cfg = _load_scenario(args)
    runner = simlab.coverage_study if coverage else simlab.run_scenario
    result = runner(cfg, jobs=args.jobs)
    paths = simlab.emit_tables(result, args.output)
    _write_json_mirror(paths[0], {"config": result.config, "cells": {
        f"{k[0]}/{k[1]}/{k[2]}": vars(c) for k, c in sorted(result.cells.items())
    }})
    print("resolved config: " + json.dumps(result.config, sort_keys=True))
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_influence(args) -> int:
    family = get_family(args.family)
    theta0 = np.array(_float_list(args.theta0))
    if theta0.size != 2:
        raise SchemaError("--theta0 must give exactly 2 values")
    z = args.z if args.z is not None else float(family.quantile(theta0, args.quantile))
    eps_grid = _float_list(args.eps_grid)
    points = alpha_curve(family, theta0, z, eps_grid, mechanism=args.mechanism)

    config = {
        "command": "influence",
        "family": args.family,
        "theta0": theta0.tolist(),
        "z": z,
        "quantile": args.quantile,
        "eps_grid": eps_grid,
        "mechanism": args.mechanism,
    }
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        fh.write("# svymhde-influence v1 config=%s\n" % json.dumps(config, sort_keys=True))
        fh.write("epsilon,estimator,%s,%s,converged\n" % family.param_names)
        for pt in points:
            fh.write(
                f"{float(pt.epsilon)!r},{pt.estimator},"
                f"{float(pt.theta[0])!r},{float(pt.theta[1])!r},"
                f"{'true' if pt.converged else 'false'}\n"
            )
    _write_json_mirror(args.output, {
        "config": config,
        "points": [
            {"epsilon": p.epsilon, "estimator": p.estimator,
             "theta": p.theta, "converged": p.converged}
            for p in points
        ],
    })
    print(f"z = {z!r}")
    print(f"wrote {args.output} and JSON mirror")
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.input, encoding="utf-8") as fh:
        result = simlab.result_from_csv(fh.read())
    sys.stdout.write(simlab.result_to_text(result))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "coverage":
            return cmd_simulate(args, coverage=True)
        if args.command == "influence":
            return cmd_influence(args)
        if args.command == "report":
            return cmd_report(args)
        parser.error(f"unknown command {args.command!r}")
    except SchemaError as exc:
        print(f"error (schema): {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ConvergenceError as exc:
        print(f"error (convergence): {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(f"diagnostics: {exc.diagnostics}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_IO
    except SvymhdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
