"""Command-line interface.

Subcommands: fit (index estimate with its lambda profile), link (link
values on a grid), mc (Monte Carlo study over (n, sigma_u) cells), cv
(bandwidth cross-validation). Artifacts are CSV (with the resolved
configuration in a leading "# config:" comment) or JSON (configuration
embedded under "config"), chosen by --format or the --out extension.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation
failure. Failures print a single JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io as artifacts
from .bandwidth import (
    BandwidthSet,
    cv_bandwidth_set,
    cv_scores,
    default_candidates,
    rule_of_thumb,
    select_candidate,
)
from .data import Dataset, MeasurementErrorSpec
from .errors import ConfigError, DataError, EstimationError
from .mc import run_study
from .simex import (
    SimexConfig,
    default_lambda_grid,
    default_link_grid,
    estimate_beta,
    estimate_link,
)
from .solver import initial_beta


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports problems through ConfigError."""

    def error(self, message):
        raise ConfigError(message)


def _floats(text: str, flag: str) -> np.ndarray:
    try:
        values = [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{flag} expects at least one number")
    return np.array(values)


def _parse_cells(text: str):
    cells = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ConfigError(
                f"--cells expects 'n:sigma_u' pairs separated by ';', got {part!r}"
            )
        try:
            cells.append((int(pieces[0]), float(pieces[1])))
        except ValueError:
            raise ConfigError(f"could not parse cell {part!r}") from None
    if not cells:
        raise ConfigError("--cells expects at least one 'n:sigma_u' pair")
    return cells


def _add_noise_options(parser):
    group = parser.add_argument_group("measurement error (exactly one)")
    group.add_argument("--sigma-u", help="comma-separated noise standard "
                       "deviations, one per covariate (diagonal covariance)")
    group.add_argument("--sigma-u-file", help="CSV file with the full "
                       "noise covariance matrix (no header)")
    group.add_argument("--replicates", help="CSV file of paired "
                       "remeasurements with columns wj_rep1, wj_rep2")


def _add_simex_options(parser):
    group = parser.add_argument_group("simulation-extrapolation")
    group.add_argument("--seed", type=int, required=True,
                       help="integer seed; reruns are byte-identical")
    group.add_argument("--lambda-grid", help="explicit comma-separated "
                       "noise multipliers starting at 0")
    group.add_argument("--lambda-max", type=float, default=2.0)
    group.add_argument("--lambda-count", type=int, default=11)
    group.add_argument("--b-reps", type=int, default=50,
                       help="remeasured replicates per noise level")
    group.add_argument("--max-iter", type=int, default=100)
    group.add_argument("--tol-step", type=float, default=1e-8)
    group.add_argument("--tol-residual", type=float, default=1e-6)


def _add_bandwidth_options(parser):
    group = parser.add_argument_group("bandwidths")
    group.add_argument("--bandwidth-method", choices=("rt", "cv"), default="rt")
    group.add_argument("--h", type=float, help="explicit link bandwidth "
                       "(requires --h1 and --h2)")
    group.add_argument("--h1", type=float, help="explicit derivative bandwidth")
    group.add_argument("--h2", type=float, help="explicit link-output bandwidth")
    group.add_argument("--cv-candidates", help="comma-separated candidate "
                       "scales for cross-validation")
    group.add_argument("--cv-folds", type=int, default=10)
    group.add_argument("--cv-loo", action="store_true",
                       help="leave-one-out instead of K folds")


def _add_output_options(parser):
    parser.add_argument("--out", required=True, help="artifact path")
    parser.add_argument("--format", choices=("csv", "json"),
                        help="defaults to json for .json paths, csv otherwise")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sisimex", description=__doc__.split("\n\n")[0])
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="estimate the index direction")
    fit.add_argument("--data", required=True, help="CSV with columns y, w1..wp")
    _add_noise_options(fit)
    _add_simex_options(fit)
    _add_bandwidth_options(fit)
    _add_output_options(fit)

    link = commands.add_parser("link", help="estimate the link on a grid")
    link.add_argument("--data", required=True, help="CSV with columns y, w1..wp")
    _add_noise_options(link)
    _add_simex_options(link)
    _add_bandwidth_options(link)
    link.add_argument("--grid", help="explicit comma-separated evaluation points")
    link.add_argument("--grid-count", type=int, default=15)
    link.add_argument("--grid-lower", type=float, default=0.05)
    link.add_argument("--grid-upper", type=float, default=0.95)
    _add_output_options(link)

    mc = commands.add_parser("mc", help="Monte Carlo study")
    mc.add_argument("--cells", required=True,
                    help="study cells as 'n:sigma_u;n:sigma_u;...'")
    mc.add_argument("--reps", type=int, required=True)
    _add_simex_options(mc)
    mc.add_argument("--beta", help="true index, comma-separated unit vector")
    mc.add_argument("--sigma-eps", type=float, default=0.2)
    mc.add_argument("--link-name", default="quadratic")
    mc.add_argument("--with-link", action="store_true",
                    help="add link-recovery summaries (JSON artifact only)")
    mc.add_argument("--n-grid", type=int, default=15)
    _add_output_options(mc)

    cv = commands.add_parser("cv", help="cross-validate the bandwidth scale")
    cv.add_argument("--data", required=True, help="CSV with columns y, w1..wp")
    _add_noise_options(cv)
    _add_simex_options(cv)
    cv.add_argument("--cv-candidates", help="comma-separated candidate scales")
    cv.add_argument("--cv-folds", type=int, default=10)
    cv.add_argument("--cv-loo", action="store_true")
    _add_output_options(cv)
    return parser


def _resolve_format(args) -> str:
    if args.format:
        return args.format
    return "json" if str(args.out).endswith(".json") else "csv"


def _resolve_noise(args, p: int) -> tuple[MeasurementErrorSpec, dict]:
    chosen = [name for name, value in (
        ("--sigma-u", args.sigma_u),
        ("--sigma-u-file", args.sigma_u_file),
        ("--replicates", args.replicates),
    ) if value is not None]
    if len(chosen) != 1:
        raise ConfigError(
            "provide exactly one of --sigma-u, --sigma-u-file, --replicates"
        )
    if args.sigma_u is not None:
        sds = _floats(args.sigma_u, "--sigma-u")
        if sds.size != p:
            raise ConfigError(
                f"--sigma-u needs {p} values for {p} covariates, got {sds.size}"
            )
        if not np.all(sds >= 0):
            raise ConfigError("--sigma-u values must be >= 0")
        me = MeasurementErrorSpec.from_covariance(np.diag(sds * sds))
        info = {"source": "sigma-u", "sigma_u": [float(s) for s in sds]}
    elif args.sigma_u_file is not None:
        try:
            matrix = np.loadtxt(args.sigma_u_file, delimiter=",", ndmin=2)
        except OSError as exc:
            raise DataError(f"cannot read {args.sigma_u_file}: {exc}") from None
        except ValueError as exc:
            raise DataError(f"bad covariance file {args.sigma_u_file}: {exc}") from None
        try:
            me = MeasurementErrorSpec.from_covariance(matrix)
        except ConfigError as exc:
            raise DataError(f"bad covariance in {args.sigma_u_file}: {exc}") from None
        if me.p != p:
            raise DataError(
                f"covariance is {me.p}x{me.p} but the data has {p} covariates"
            )
        info = {"source": "sigma-u-file", "path": args.sigma_u_file,
                "covariance": artifacts.jsonable(me.covariance)}
    else:
        me = artifacts.error_spec_from_replicates(args.replicates, n_coords=p)
        info = {"source": "replicates", "path": args.replicates,
                "covariance": artifacts.jsonable(me.covariance)}
    return me, info


def _resolve_lambda_grid(args) -> np.ndarray:
    if args.lambda_grid:
        return _floats(args.lambda_grid, "--lambda-grid")
    return default_lambda_grid(args.lambda_max, args.lambda_count)


def _base_config(args, data: Dataset, me: MeasurementErrorSpec):
    lambda_grid = _resolve_lambda_grid(args)
    explicit = [value for value in (args.h, args.h1, args.h2) if value is not None]
    bw_info: dict = {}
    if explicit:
        if len(explicit) != 3:
            raise ConfigError("--h, --h1, --h2 must be given together")
        bandwidths = BandwidthSet(h=args.h, h1=args.h1, h2=args.h2,
                                  method="manual")
    elif args.bandwidth_method == "rt":
        bandwidths = rule_of_thumb(data, initial_beta(data))
    else:
        template = SimexConfig(
            bandwidths=rule_of_thumb(data, initial_beta(data)),
            seed=args.seed, lambda_grid=lambda_grid, b_reps=args.b_reps,
            max_iter=args.max_iter, tol_step=args.tol_step,
            tol_residual=args.tol_residual,
        )
        if args.cv_candidates:
            candidates = _floats(args.cv_candidates, "--cv-candidates")
        else:
            candidates = default_candidates(data, initial_beta(data))
        scores = cv_scores(data, me, template, candidates,
                           folds=args.cv_folds, loo=args.cv_loo)
        pos = select_candidate(candidates, scores)
        h_opt = float(candidates[pos])
        bandwidths = cv_bandwidth_set(h_opt, data.n)
        bw_info = {"cv_h_opt": h_opt}
    cfg = SimexConfig(
        bandwidths=bandwidths, seed=args.seed, lambda_grid=lambda_grid,
        b_reps=args.b_reps, max_iter=args.max_iter, tol_step=args.tol_step,
        tol_residual=args.tol_residual,
    )
    return cfg, bw_info


def _config_echo(args, cfg: SimexConfig, noise_info: dict, bw_info: dict) -> dict:
    echo = {
        "command": args.command,
        "seed": int(cfg.seed),
        "lambda_grid": [float(v) for v in cfg.lambda_grid],
        "b_reps": int(cfg.b_reps),
        "bandwidths": {
            "h": float(cfg.bandwidths.h),
            "h1": float(cfg.bandwidths.h1),
            "h2": float(cfg.bandwidths.h2),
            "method": cfg.bandwidths.method,
        },
        "max_iter": int(cfg.max_iter),
        "tol_step": float(cfg.tol_step),
        "tol_residual": float(cfg.tol_residual),
        "noise": noise_info,
    }
    if getattr(args, "data", None) is not None:
        echo["data"] = args.data
    echo.update(bw_info)
    return echo


def _cmd_fit(args) -> int:
    data = artifacts.load_dataset(args.data)
    me, noise_info = _resolve_noise(args, data.p)
    cfg, bw_info = _base_config(args, data, me)
    result = estimate_beta(data, me, cfg)
    config = _config_echo(args, cfg, noise_info, bw_info)
    converged = result.diagnostics.cell_converged.sum(axis=0)
    failed = result.diagnostics.cell_failed.sum(axis=0)
    if _resolve_format(args) == "json":
        artifacts.write_json(args.out, {
            "config": config,
            "beta_simex": artifacts.jsonable(result.beta_simex.beta),
            "beta_naive": artifacts.jsonable(result.beta_naive.beta),
            "anchor": int(result.beta_simex.anchor),
            "beta_start": artifacts.jsonable(result.diagnostics.beta_start),
            "lambda_grid": artifacts.jsonable(result.lambda_grid),
            "profile": artifacts.jsonable(result.profile),
            "extrapolant_coef": artifacts.jsonable(
                [fit.coef for fit in result.extrapolants]),
            "converged_cells": artifacts.jsonable(converged),
            "failed_cells": artifacts.jsonable(failed),
        })
        return 0
    rows = []
    for m, lam in enumerate(result.lambda_grid):
        for j in range(data.p):
            rows.append(("profile", lam, j + 1, result.profile[j, m]))
    for j in range(data.p):
        rows.append(("simex", -1.0, j + 1, result.beta_simex.beta[j]))
    for j in range(data.p):
        rows.append(("naive", 0.0, j + 1, result.beta_naive.beta[j]))
    for m, lam in enumerate(result.lambda_grid):
        rows.append(("converged_cells", lam, "", int(converged[m])))
        rows.append(("failed_cells", lam, "", int(failed[m])))
    artifacts.write_csv(args.out, ("series", "lambda", "component", "value"),
                        rows, config)
    return 0


def _cmd_link(args) -> int:
    data = artifacts.load_dataset(args.data)
    me, noise_info = _resolve_noise(args, data.p)
    cfg, bw_info = _base_config(args, data, me)
    result = estimate_beta(data, me, cfg)
    if args.grid:
        grid = _floats(args.grid, "--grid")
    else:
        grid = default_link_grid(data, result.beta_simex,
                                 count=args.grid_count,
                                 lower=args.grid_lower, upper=args.grid_upper)
    link = estimate_link(data, me, cfg, result.beta_simex, grid=grid)
    config = _config_echo(args, cfg, noise_info, bw_info)
    config["grid"] = [float(v) for v in grid]
    if _resolve_format(args) == "json":
        artifacts.write_json(args.out, {
            "config": config,
            "beta_simex": artifacts.jsonable(result.beta_simex.beta),
            "beta_naive": artifacts.jsonable(result.beta_naive.beta),
            "t0": artifacts.jsonable(link.grid),
            "g_simex": artifacts.jsonable(link.g_simex),
            "g_naive": artifacts.jsonable(link.g_naive),
            "per_lambda": artifacts.jsonable(link.per_lambda),
            "excluded": artifacts.jsonable(link.excluded),
        })
        return 0
    header = ["t0", "g_simex", "g_naive"] + [
        f"g_lambda_{lam:g}" for lam in link.lambda_grid
    ]
    rows = []
    for idx in range(link.grid.size):
        rows.append([link.grid[idx], link.g_simex[idx], link.g_naive[idx]]
                    + [link.per_lambda[m, idx] for m in range(link.lambda_grid.size)])
    artifacts.write_csv(args.out, header, rows, config)
    return 0


def _cmd_mc(args) -> int:
    cells = _parse_cells(args.cells)
    beta = _floats(args.beta, "--beta") if args.beta else None
    lambda_grid = _resolve_lambda_grid(args)
    report = run_study(
        cells, reps=args.reps, seed=args.seed, b_reps=args.b_reps,
        lambda_grid=lambda_grid, beta=beta, sigma_eps=args.sigma_eps,
        link=args.link_name, with_link=args.with_link, n_grid=args.n_grid,
        max_iter=args.max_iter, tol_step=args.tol_step,
        tol_residual=args.tol_residual,
    )
    config = {
        "command": "mc",
        "cells": [[n, s] for n, s in cells],
        "reps": int(args.reps),
        "seed": int(args.seed),
    }
    config.update(report.settings)
    if _resolve_format(args) == "json":
        payload_cells = []
        for cell in report.cells:
            entry = {
                "n": cell.n,
                "sigma_u": cell.sigma_u,
                "reps": cell.reps,
                "failed_reps": cell.failed_reps,
            }
            for label, stats in (("simex", cell.simex), ("naive", cell.naive)):
                entry[label] = {
                    "bias": artifacts.jsonable(stats.bias),
                    "sd": artifacts.jsonable(stats.sd),
                    "mc_se": artifacts.jsonable(stats.mc_se),
                }
            for label, stats in (("link_simex", cell.link_simex),
                                 ("link_naive", cell.link_naive)):
                if stats is not None:
                    entry[label] = {
                        "grid": artifacts.jsonable(stats.grid),
                        "truth": artifacts.jsonable(stats.truth),
                        "rmse_mean": artifacts.jsonable(stats.rmse_mean),
                        "rmse_median": artifacts.jsonable(stats.rmse_median),
                        "rmse_q25": artifacts.jsonable(stats.rmse_q25),
                        "rmse_q75": artifacts.jsonable(stats.rmse_q75),
                        "mean_curve": artifacts.jsonable(stats.mean_curve),
                    }
            payload_cells.append(entry)
        artifacts.write_json(args.out, {"config": config, "cells": payload_cells})
        return 0
    rows = []
    for cell in report.cells:
        for label, stats in (("simex", cell.simex), ("naive", cell.naive)):
            for j in range(stats.bias.size):
                rows.append((cell.n, cell.sigma_u, label, j + 1,
                             stats.bias[j], stats.sd[j], stats.mc_se[j],
                             cell.reps, cell.failed_reps))
    artifacts.write_csv(
        args.out,
        ("n", "sigma_u", "method", "component", "bias", "sd", "mc_se",
         "reps", "failed_reps"),
        rows, config,
    )
    return 0


def _cmd_cv(args) -> int:
    data = artifacts.load_dataset(args.data)
    me, noise_info = _resolve_noise(args, data.p)
    lambda_grid = _resolve_lambda_grid(args)
    template = SimexConfig(
        bandwidths=rule_of_thumb(data, initial_beta(data)),
        seed=args.seed, lambda_grid=lambda_grid, b_reps=args.b_reps,
        max_iter=args.max_iter, tol_step=args.tol_step,
        tol_residual=args.tol_residual,
    )
    if args.cv_candidates:
        candidates = _floats(args.cv_candidates, "--cv-candidates")
    else:
        candidates = default_candidates(data, initial_beta(data))
    scores = cv_scores(data, me, template, candidates,
                       folds=args.cv_folds, loo=args.cv_loo)
    pos = select_candidate(candidates, scores)
    h_opt = float(candidates[pos])
    chosen = cv_bandwidth_set(h_opt, data.n)
    config = _config_echo(args, template, noise_info, {})
    config["folds"] = int(args.cv_folds)
    config["loo"] = bool(args.cv_loo)
    config["h_opt"] = h_opt
    config["chosen_bandwidths"] = {
        "h": chosen.h, "h1": chosen.h1, "h2": chosen.h2, "method": chosen.method,
    }
    if _resolve_format(args) == "json":
        artifacts.write_json(args.out, {
            "config": config,
            "candidates": artifacts.jsonable(candidates),
            "scores": artifacts.jsonable(scores),
            "h_opt": h_opt,
        })
        return 0
    rows = [(candidates[i], scores[i] if np.isfinite(scores[i]) else "",
             int(not np.isfinite(scores[i]))) for i in range(candidates.size)]
    artifacts.write_csv(args.out, ("h", "cv_score", "disqualified"), rows, config)
    return 0


_COMMANDS = {"fit": _cmd_fit, "link": _cmd_link, "mc": _cmd_mc, "cv": _cmd_cv}


def _fail(kind: str, exc: Exception, code: int) -> int:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("config", exc, 2)
    except DataError as exc:
        return _fail("data", exc, 3)
    except EstimationError as exc:
        return _fail("estimation", exc, 4)


if __name__ == "__main__":
    sys.exit(main())
