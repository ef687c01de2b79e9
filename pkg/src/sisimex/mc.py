"""Monte Carlo harness for the index and link estimators.

Replications are pure functions of (study seed, cell, replication id):
each replication derives its own counter-based stream, generates a fresh
sample, picks rule-of-thumb bandwidths from that sample, and runs the
simulation-extrapolation fit. Results are therefore identical no matter
how replications are scheduled, including across worker-count changes.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bandwidth import rule_of_thumb
from .data import Dataset, MeasurementErrorSpec
from .errors import ConfigError, EstimationError, SingularFit
from .simex import SimexConfig, default_lambda_grid, estimate_beta, estimate_link
from .smoothing import batch_local_linear
from .solver import SolverConfig, initial_beta, least_squares_objective
from .sphere import UnitIndex, align_sign, unit_index_from

# Domain tag separating study streams from the pseudo-noise streams that
# the simulation-extrapolation fit derives from its own seed.
STUDY_STREAM = 2

WORKERS_ENV_VAR = "SISIMEX_WORKERS"

DEFAULT_INDEX = (np.sqrt(3.0) / 3.0, np.sqrt(6.0) / 3.0)


def quadratic_link(t):
    """Concave quadratic link peaking at t = 1."""
    t = np.asarray(t, dtype=np.float64)
    out = 1.0 - 2.0 * (t - 1.0) ** 2
    if out.ndim == 0:
        return float(out)
    return out


LINKS = {"quadratic": quadratic_link}


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process: y = link(beta @ x) + noise, w = x + u.

    Measurement error is additive Gaussian on the first coordinate only,
    with standard deviation sigma_u; the remaining coordinates are
    observed exactly.
    """

    n: int
    sigma_u: float = 0.0
    beta: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_INDEX))
    sigma_eps: float = 0.2
    link: str = "quadratic"

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        if beta.ndim != 1 or beta.shape[0] < 2:
            raise ConfigError("beta must be 1-d with length >= 2")
        if abs(np.linalg.norm(beta) - 1.0) > 1e-8:
            raise ConfigError("beta must have unit norm")
        if not (isinstance(self.n, (int, np.integer)) and self.n >= beta.shape[0] + 2):
            raise ConfigError(f"n must be an integer >= p + 2, got {self.n!r}")
        for name in ("sigma_u", "sigma_eps"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and np.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {value!r}")
        if self.link not in LINKS:
            raise ConfigError(f"unknown link {self.link!r}; have {sorted(LINKS)}")

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    def link_fn(self):
        return LINKS[self.link]

    def error_spec(self) -> MeasurementErrorSpec:
        cov = np.zeros((self.p, self.p))
        cov[0, 0] = float(self.sigma_u) ** 2
        return MeasurementErrorSpec.from_covariance(cov)


def _float_bits(value: float) -> int:
    """Stable integer encoding of a float for seed material."""
    return int(np.float64(value).view(np.uint64))


def replication_seed(seed: int, n: int, sigma_u: float,
                     rep: int) -> np.random.SeedSequence:
    """Counter-based stream identity for one study replication."""
    return np.random.SeedSequence(
        (int(seed), STUDY_STREAM, int(n), _float_bits(sigma_u), int(rep))
    )


def generate(spec: DgpSpec, seed):
    """Draw one sample; returns (Dataset, latent_covariates).

    seed may be an integer or a SeedSequence. Draw order is fixed:
    covariates, response noise, measurement noise.
    """
    if isinstance(seed, np.random.SeedSequence):
        seq = seed
    else:
        seq = np.random.SeedSequence(int(seed))
    rng = np.random.Generator(np.random.Philox(seq))
    x = rng.standard_normal((spec.n, spec.p))
    eps = rng.standard_normal(spec.n) * spec.sigma_eps
    noise = rng.standard_normal((spec.n, spec.p))
    sds = np.zeros(spec.p)
    sds[0] = spec.sigma_u
    w = x + noise * sds
    y = spec.link_fn()(x @ spec.beta) + eps
    return Dataset(y=y, w=w), x


def rmse(estimate, truth) -> float:
    """Root mean squared error over the finite entries of estimate."""
    est = np.asarray(estimate, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.shape != tru.shape:
        raise ConfigError("estimate and truth must have equal shape")
    keep = np.isfinite(est)
    if not keep.any():
        return float("nan")
    diff = est[keep] - tru[keep]
    return float(np.sqrt(np.mean(diff * diff)))


def angle_grid_search(data: Dataset, cfg: SolverConfig,
                      grid_size: int = 10000) -> UnitIndex:
    """Brute-force index estimate for p = 2.

    Minimizes the smoothed residual sum of squares over directions
    (cos t, sin t), t in [0, pi); ties resolve to the smallest angle.
    """
    if data.p != 2:
        raise ConfigError("grid search only supports two covariates")
    if grid_size < 2:
        raise ConfigError(f"grid_size must be >= 2, got {grid_size!r}")
    best_obj = np.inf
    best = None
    for k in range(int(grid_size)):
        angle = np.pi * k / grid_size
        beta = np.array([np.cos(angle), np.sin(angle)])
        try:
            obj = least_squares_objective(beta, data, cfg.h)
        except SingularFit:
            continue
        if obj < best_obj:
            best_obj = obj
            best = beta
    if best is None:
        raise EstimationError("no direction admitted a smoothed fit")
    return unit_index_from(best)


@dataclass(frozen=True)
class MethodStats:
    """Bias, spread, and per-replication estimates for one estimator."""

    bias: np.ndarray
    sd: np.ndarray
    mc_se: np.ndarray
    estimates: np.ndarray


@dataclass(frozen=True)
class LinkStats:
    """Link-recovery summaries over replications on a fixed truth grid."""

    grid: np.ndarray
    truth: np.ndarray
    rmse_values: np.ndarray
    rmse_mean: float
    rmse_median: float
    rmse_q25: float
    rmse_q75: float
    mean_curve: np.ndarray


@dataclass(frozen=True)
class CellResult:
    """All replication summaries for one (n, sigma_u) study cell."""

    n: int
    sigma_u: float
    reps: int
    failed_reps: int
    simex: MethodStats
    naive: MethodStats
    link_simex: LinkStats | None = None
    link_naive: LinkStats | None = None


@dataclass(frozen=True)
class McReport:
    cells: tuple[CellResult, ...]
    reps: int
    seed: int
    settings: dict
    runtime_seconds: float


def _simex_config(data: Dataset, params: dict) -> SimexConfig:
    bw = rule_of_thumb(data, initial_beta(data))
    return SimexConfig(
        bandwidths=bw,
        seed=params["fit_seed"],
        lambda_grid=params["lambda_grid"],
        b_reps=params["b_reps"],
        max_iter=params["max_iter"],
        tol_step=params["tol_step"],
        tol_residual=params["tol_residual"],
    )


def _run_replication(task):
    """One study replication; must stay importable for process pools."""
    params, n, sigma_u, rep = task
    spec = DgpSpec(n=n, sigma_u=sigma_u, beta=params["beta"],
                   sigma_eps=params["sigma_eps"], link=params["link"])
    seq = replication_seed(params["seed"], n, sigma_u, rep)
    data_seq, fit_seq = seq.spawn(2)
    data, _ = generate(spec, data_seq)
    me = spec.error_spec()
    fit_params = dict(params)
    fit_params["fit_seed"] = int(fit_seq.generate_state(1, dtype=np.uint64)[0])
    out = {"rep": rep, "ok": False}
    try:
        cfg = _simex_config(data, fit_params)
        result = estimate_beta(data, me, cfg)
    except EstimationError as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
        return out
    out["ok"] = True
    out["simex"] = align_sign(result.beta_simex.beta, spec.beta)
    out["naive"] = align_sign(result.beta_naive.beta, spec.beta)
    grid = params.get("link_grid")
    if grid is not None:
        n_grid = grid.size
        simex_curve = np.full(n_grid, np.nan)
        naive_curve = np.full(n_grid, np.nan)
        try:
            link = estimate_link(data, me, cfg, result.beta_simex, grid=grid)
            keep = np.ones(n_grid, dtype=bool)
            keep[link.excluded] = False
            simex_curve[keep] = link.g_simex
        except EstimationError:
            pass
        t_naive = data.w @ result.beta_naive.beta
        g_n, _, ok_n = batch_local_linear(grid, t_naive, data.y, cfg.bandwidths.h2)
        # same no-extrapolation rule the link estimator applies
        ok_n = ok_n & (grid >= t_naive.min()) & (grid <= t_naive.max())
        naive_curve[ok_n] = g_n[ok_n]
        out["simex_curve"] = simex_curve
        out["naive_curve"] = naive_curve
    return out


def _truth_grid(params: dict, n: int, sigma_u: float, reps: int,
                n_grid: int) -> np.ndarray:
    """Evaluation grid between pooled 5%/95% quantiles of the true index."""
    spec = DgpSpec(n=n, sigma_u=sigma_u, beta=params["beta"],
                   sigma_eps=params["sigma_eps"], link=params["link"])
    pooled = np.empty(n * reps)
    for rep in range(reps):
        data_seq, _ = replication_seed(params["seed"], n, sigma_u, rep).spawn(2)
        _, x = generate(spec, data_seq)
        pooled[rep * n:(rep + 1) * n] = x @ spec.beta
    lo, hi = np.quantile(pooled, [0.05, 0.95])
    return np.linspace(lo, hi, n_grid)


def _method_stats(rows: list, beta: np.ndarray) -> MethodStats:
    est = np.vstack(rows)
    bias = est.mean(axis=0) - beta
    sd = est.std(axis=0, ddof=0)
    return MethodStats(bias=bias, sd=sd, mc_se=sd / np.sqrt(est.shape[0]),
                       estimates=est)


def _link_stats(curves: list, grid: np.ndarray, truth: np.ndarray) -> LinkStats:
    stack = np.vstack(curves)
    values = np.array([rmse(row, truth) for row in stack])
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        finite = np.array([np.nan])
    counts = np.isfinite(stack).sum(axis=0)
    sums = np.nansum(np.where(np.isfinite(stack), stack, 0.0), axis=0)
    mean_curve = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    q25, q50, q75 = np.percentile(finite, [25.0, 50.0, 75.0])
    return LinkStats(
        grid=grid,
        truth=truth,
        rmse_values=values,
        rmse_mean=float(finite.mean()),
        rmse_median=float(q50),
        rmse_q25=float(q25),
        rmse_q75=float(q75),
        mean_curve=mean_curve,
    )


def resolve_workers(workers=None) -> int:
    """Worker count from the argument, else the environment, else 1."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV_VAR, "").strip()
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ConfigError(
                    f"{WORKERS_ENV_VAR} must be an integer, got {env!r}"
                ) from None
        else:
            workers = 1
    return max(1, min(int(workers), os.cpu_count() or 1))


def run_study(cells, reps: int, seed: int, b_reps: int = 50,
              lambda_grid=None, beta=None, sigma_eps: float = 0.2,
              link: str = "quadratic", with_link: bool = False,
              n_grid: int = 15, max_iter: int = 100, tol_step: float = 1e-8,
              tol_residual: float = 1e-6, workers=None) -> McReport:
    """Replicate the estimators over (n, sigma_u) cells.

    cells is an iterable of (n, sigma_u) pairs. Per replication the data,
    bandwidths (rule of thumb), and fit are all re-derived; replications
    that raise an estimation error are dropped and counted. with_link adds
    link-recovery summaries on an n_grid-point truth grid per cell.
    """
    t_start = time.perf_counter()
    cell_list = [(int(n), float(s)) for n, s in cells]
    if not cell_list:
        raise ConfigError("need at least one study cell")
    if not (isinstance(reps, (int, np.integer)) and reps >= 1):
        raise ConfigError(f"reps must be an integer >= 1, got {reps!r}")
    beta_arr = np.array(DEFAULT_INDEX if beta is None else beta, dtype=np.float64)
    grid = default_lambda_grid() if lambda_grid is None else np.asarray(
        lambda_grid, dtype=np.float64)
    params = {
        "seed": int(seed),
        "b_reps": int(b_reps),
        "lambda_grid": grid,
        "beta": beta_arr,
        "sigma_eps": float(sigma_eps),
        "link": str(link),
        "max_iter": int(max_iter),
        "tol_step": float(tol_step),
        "tol_residual": float(tol_residual),
        "link_grid": None,
    }
    worker_count = resolve_workers(workers)

    results = []
    for n, sigma_u in cell_list:
        cell_params = dict(params)
        truth_grid = None
        truth = None
        if with_link:
            truth_grid = _truth_grid(params, n, sigma_u, int(reps), int(n_grid))
            truth = LINKS[str(link)](truth_grid)
            cell_params["link_grid"] = truth_grid
        tasks = [(cell_params, n, sigma_u, rep) for rep in range(int(reps))]
        if worker_count > 1:
            with ProcessPoolExecutor(max_workers=worker_count) as pool:
                rows = list(pool.map(_run_replication, tasks, chunksize=1))
        else:
            rows = [_run_replication(task) for task in tasks]
        kept = [row for row in rows if row["ok"]]
        if not kept:
            raise EstimationError(
                f"every replication failed in cell n={n}, sigma_u={sigma_u}"
            )
        simex_stats = _method_stats([row["simex"] for row in kept], beta_arr)
        naive_stats = _method_stats([row["naive"] for row in kept], beta_arr)
        link_simex = None
        link_naive = None
        if with_link:
            link_simex = _link_stats([row["simex_curve"] for row in kept],
                                     truth_grid, truth)
            link_naive = _link_stats([row["naive_curve"] for row in kept],
                                     truth_grid, truth)
        results.append(CellResult(
            n=n,
            sigma_u=sigma_u,
            reps=int(reps),
            failed_reps=int(reps) - len(kept),
            simex=simex_stats,
            naive=naive_stats,
            link_simex=link_simex,
            link_naive=link_naive,
        ))

    settings = {
        "b_reps": int(b_reps),
        "lambda_grid": [float(v) for v in grid],
        "beta": [float(v) for v in beta_arr],
        "sigma_eps": float(sigma_eps),
        "link": str(link),
        "with_link": bool(with_link),
        "n_grid": int(n_grid),
        "max_iter": int(max_iter),
        "tol_step": float(tol_step),
        "tol_residual": float(tol_residual),
        "bandwidth_method": "rt",
    }
    return McReport(
        cells=tuple(results),
        reps=int(reps),
        seed=int(seed),
        settings=settings,
        runtime_seconds=time.perf_counter() - t_start,
    )
