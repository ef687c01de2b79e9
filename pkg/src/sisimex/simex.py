"""Simulation-extrapolation estimation of the index and the link.

Surrogate covariates are remeasured with extra noise scaled by each value
of a lambda grid that starts at zero. For every noise level the index (or
the link at fixed evaluation points) is re-estimated on each of b_reps
independently remeasured datasets and averaged; a quadratic in lambda is
then fitted to the averages and read off at lambda = -1. The lambda = 0
entry involves no added noise, is computed once, and equals the naive
estimate.

Pseudo-noise draws are counter-based: replicate b always uses the stream
seeded by (seed, 1, b), so estimate_beta and estimate_link see identical
draws and reruns are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bandwidth import BandwidthSet
from .data import Dataset, MeasurementErrorSpec
from .errors import (
    ConfigError,
    EstimationError,
    SingularDesign,
    SingularFit,
    TooManyFailures,
)
from .smoothing import KernelFamily, batch_local_linear
from .solver import SolverConfig, initial_beta, solve
from .sphere import UnitIndex, align_sign, unit_index_from

# Domain tag for the pseudo-noise substreams, keeping them disjoint from
# any other stream derived from the same user seed.
PSEUDO_STREAM = 1

# Share of failed replicate fits tolerated at any single noise level.
MAX_FAILURE_SHARE = 0.2


def default_lambda_grid(lambda_max: float = 2.0, count: int = 11) -> np.ndarray:
    """Evenly spaced noise multipliers from 0 to lambda_max inclusive."""
    if not (np.isfinite(lambda_max) and lambda_max > 0):
        raise ConfigError(f"lambda_max must be finite and > 0, got {lambda_max!r}")
    if count < 3:
        raise ConfigError(f"need at least 3 grid points, got {count!r}")
    return np.linspace(0.0, float(lambda_max), int(count))


@dataclass(frozen=True)
class SimexConfig:
    """Settings for one simulation-extrapolation run.

    The solver tolerances live here (flat) rather than in a nested solver
    config because the solver's bandwidths always come from `bandwidths`.
    """

    bandwidths: BandwidthSet
    seed: int
    lambda_grid: np.ndarray = field(default_factory=default_lambda_grid)
    b_reps: int = 50
    kernel: KernelFamily = KernelFamily.EPANECHNIKOV
    max_iter: int = 100
    tol_step: float = 1e-8
    tol_residual: float = 1e-6

    def __post_init__(self):
        if not isinstance(self.bandwidths, BandwidthSet):
            raise ConfigError("bandwidths must be a BandwidthSet")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("seed must be an integer")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        grid = np.array(self.lambda_grid, dtype=np.float64)
        grid.flags.writeable = False
        object.__setattr__(self, "lambda_grid", grid)
        if grid.ndim != 1 or grid.size < 3:
            raise ConfigError("lambda_grid needs at least 3 values")
        if not np.all(np.isfinite(grid)):
            raise ConfigError("lambda_grid must be finite")
        if grid[0] != 0.0:
            raise ConfigError("lambda_grid must start at 0")
        if not np.all(np.diff(grid) > 0):
            raise ConfigError("lambda_grid must be strictly increasing")
        if not (isinstance(self.b_reps, (int, np.integer)) and self.b_reps >= 1):
            raise ConfigError(f"b_reps must be an integer >= 1, got {self.b_reps!r}")
        if not isinstance(self.kernel, KernelFamily):
            raise ConfigError(f"unknown kernel family: {self.kernel!r}")
        self.solver_config()  # validates bandwidths/tolerances together

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            h=self.bandwidths.h,
            h1=self.bandwidths.h1,
            max_iter=int(self.max_iter),
            tol_step=self.tol_step,
            tol_residual=self.tol_residual,
        )


def pseudo_noise_rng(seed: int, b: int) -> np.random.Generator:
    """Counter-based stream for replicate b of the given run seed."""
    seq = np.random.SeedSequence((int(seed), PSEUDO_STREAM, int(b)))
    return np.random.Generator(np.random.Philox(seq))


def remeasure(data: Dataset, me: MeasurementErrorSpec, lam: float,
              pseudo: np.ndarray) -> np.ndarray:
    """Surrogates with additional noise of covariance lam * Sigma_u.

    pseudo holds standard normal draws of shape (n, p). At lam == 0 the
    result equals the observed surrogates exactly.
    """
    if me.p != data.p:
        raise ConfigError("noise covariance dimension does not match data")
    if not (np.isfinite(lam) and lam >= 0):
        raise ConfigError(f"lambda must be finite and >= 0, got {lam!r}")
    pseudo = np.asarray(pseudo, dtype=np.float64)
    if pseudo.shape != data.w.shape:
        raise ConfigError("pseudo-noise shape must match the surrogate matrix")
    if lam == 0.0 or me.is_zero:
        return np.array(data.w)
    return data.w + np.sqrt(lam) * (pseudo @ me.factor.T)


@dataclass(frozen=True)
class ExtrapolantFit:
    """Quadratic fitted to estimates along the lambda grid."""

    coef: np.ndarray  # (intercept, linear, quadratic)

    def __post_init__(self):
        coef = np.array(self.coef, dtype=np.float64)
        coef.flags.writeable = False
        object.__setattr__(self, "coef", coef)
        if coef.shape != (3,) or not np.all(np.isfinite(coef)):
            raise ConfigError("extrapolant needs 3 finite coefficients")

    def predict(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        out = self.coef[0] + self.coef[1] * lam + self.coef[2] * lam * lam
        if out.ndim == 0:
            return float(out)
        return out


def quadratic_extrapolate(lambda_grid, values, at: float = -1.0):
    """Least-squares quadratic in lambda, evaluated at `at`.

    Returns (fit, value). Exact for inputs that already follow a
    polynomial of degree <= 2. Raises SingularDesign with fewer than three
    distinct grid values.
    """
    lam = np.asarray(lambda_grid, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    if lam.ndim != 1 or vals.shape != lam.shape:
        raise ConfigError("lambda_grid and values must be equal-length 1-d")
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(vals))):
        raise ConfigError("extrapolation inputs must be finite")
    if np.unique(lam).size < 3:
        raise SingularDesign("need at least 3 distinct lambda values")
    design = np.column_stack([np.ones_like(lam), lam, lam * lam])
    coef, _, _, _ = np.linalg.lstsq(design, vals, rcond=None)
    fit = ExtrapolantFit(coef=coef)
    return fit, float(fit.predict(at))


@dataclass(frozen=True)
class SimexDiagnostics:
    """Bookkeeping from a beta estimation run.

    cell_converged / cell_failed are (b_reps, len(lambda_grid)) masks; the
    lambda = 0 column is one shared fit replicated across rows. raw_*
    hold the per-lambda averages and the extrapolated vector before
    renormalization to the sphere.
    """

    beta_start: np.ndarray
    anchor: int
    cell_converged: np.ndarray
    cell_failed: np.ndarray
    raw_profile: np.ndarray
    raw_extrapolated: np.ndarray


@dataclass(frozen=True)
class SimexBetaResult:
    """Index estimates with their lambda profile and extrapolants.

    profile column m is the unit-norm average of replicate estimates at
    lambda_grid[m]; column 0 equals beta_naive by construction.
    """

    beta_simex: UnitIndex
    beta_naive: UnitIndex
    lambda_grid: np.ndarray
    profile: np.ndarray
    extrapolants: tuple[ExtrapolantFit, ...]
    diagnostics: SimexDiagnostics


def _normalize_columns(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=0)
    if not np.all(norms > 0):
        raise EstimationError("averaged index direction vanished")
    return matrix / norms


def estimate_beta(data: Dataset, me: MeasurementErrorSpec,
                  cfg: SimexConfig) -> SimexBetaResult:
    """Simulation-extrapolation estimate of the index direction.

    Replicate fits chain warm starts along the lambda grid; a replicate
    cell whose fit fails is retried once from the least-squares start and
    then dropped. More than MAX_FAILURE_SHARE dropped cells at any lambda
    aborts with TooManyFailures.
    """
    if me.p != data.p:
        raise ConfigError("noise covariance dimension does not match data")
    if data.p < 2:
        raise ConfigError("index estimation needs at least two covariates")
    start = initial_beta(data)
    anchor = start.anchor
    solver_cfg = cfg.solver_config()
    try:
        sol0 = solve(data, solver_cfg, start)
    except EstimationError as exc:
        raise TooManyFailures("estimation failed with no added noise") from exc

    grid = cfg.lambda_grid
    m_count = grid.size
    b_reps = int(cfg.b_reps)
    p = data.p
    base = align_sign(sol0.beta.beta, start.beta)

    cell_converged = np.zeros((b_reps, m_count), dtype=bool)
    cell_failed = np.zeros((b_reps, m_count), dtype=bool)
    sums = np.zeros((p, m_count))
    kept = np.zeros(m_count, dtype=np.int64)

    # lambda = 0 adds no noise: one fit shared by every replicate.
    sums[:, 0] = base * b_reps
    kept[0] = b_reps
    cell_converged[:, 0] = sol0.converged

    if me.is_zero:
        for m in range(1, m_count):
            sums[:, m] = base * b_reps
            kept[m] = b_reps
            cell_converged[:, m] = sol0.converged
    else:
        for b in range(b_reps):
            pseudo = pseudo_noise_rng(cfg.seed, b).standard_normal((data.n, p))
            prev = sol0.beta
            for m in range(1, m_count):
                cell = Dataset(y=data.y, w=remeasure(data, me, grid[m], pseudo))
                try:
                    sol = solve(cell, solver_cfg, prev)
                except EstimationError:
                    try:
                        sol = solve(cell, solver_cfg, start)
                    except EstimationError:
                        cell_failed[b, m] = True
                        continue
                sums[:, m] += align_sign(sol.beta.beta, start.beta)
                kept[m] += 1
                cell_converged[b, m] = sol.converged
                prev = sol.beta
        failures = b_reps - kept
        worst = int(np.argmax(failures))
        if failures[worst] > MAX_FAILURE_SHARE * b_reps:
            raise TooManyFailures(
                f"{failures[worst]} of {b_reps} replicate fits failed at "
                f"lambda={grid[worst]!r}"
            )

    raw_profile = sums / kept
    profile = _normalize_columns(raw_profile)

    extrapolants = []
    raw_extrapolated = np.empty(p)
    for j in range(p):
        fit, value = quadratic_extrapolate(grid, profile[j])
        extrapolants.append(fit)
        raw_extrapolated[j] = value

    beta_simex = unit_index_from(raw_extrapolated, prefer_anchor=anchor)
    beta_naive = unit_index_from(profile[:, 0], prefer_anchor=anchor)
    diagnostics = SimexDiagnostics(
        beta_start=start.beta,
        anchor=anchor,
        cell_converged=cell_converged,
        cell_failed=cell_failed,
        raw_profile=raw_profile,
        raw_extrapolated=raw_extrapolated,
    )
    return SimexBetaResult(
        beta_simex=beta_simex,
        beta_naive=beta_naive,
        lambda_grid=grid,
        profile=profile,
        extrapolants=tuple(extrapolants),
        diagnostics=diagnostics,
    )


@dataclass(frozen=True)
class LinkEstimate:
    """Link values on a grid of index points.

    grid keeps only the points where every replicate fit succeeded;
    excluded holds the integer positions (into the grid passed in) of the
    dropped points. per_lambda rows follow lambda_grid.
    """

    grid: np.ndarray
    g_simex: np.ndarray
    g_naive: np.ndarray
    per_lambda: np.ndarray
    excluded: np.ndarray
    lambda_grid: np.ndarray


def default_link_grid(data: Dataset, index: UnitIndex, count: int = 15,
                      lower: float = 0.05, upper: float = 0.95) -> np.ndarray:
    """Equally spaced evaluation points between index-value quantiles."""
    if count < 1:
        raise ConfigError(f"need at least 1 grid point, got {count!r}")
    if not 0 <= lower < upper <= 1:
        raise ConfigError("quantile bounds must satisfy 0 <= lower < upper <= 1")
    t = data.w @ index.beta
    lo, hi = np.quantile(t, [lower, upper])
    return np.linspace(lo, hi, int(count))


def estimate_link(data: Dataset, me: MeasurementErrorSpec, cfg: SimexConfig,
                  index: UnitIndex, grid=None) -> LinkEstimate:
    """Simulation-extrapolation estimate of the link on a point grid.

    The index direction is held fixed (pass the extrapolated index); only
    the smoothing is repeated on remeasured surrogates, with the same
    pseudo-noise streams estimate_beta uses. Bandwidth is bandwidths.h2.

    Grid points that fall outside the span of the index values in any
    pseudo draw are excluded rather than extrapolated: a window rescued
    beyond the data range is a one-sided line whose value at the grid
    point is unbounded noise.
    """
    if me.p != data.p:
        raise ConfigError("noise covariance dimension does not match data")
    if index.beta.shape[0] != data.p:
        raise ConfigError("index dimension does not match data")
    if grid is None:
        grid = default_link_grid(data, index)
    pts = np.asarray(grid, dtype=np.float64)
    if pts.ndim != 1 or pts.size < 1:
        raise ConfigError("evaluation grid must be 1-d and nonempty")
    if not np.all(np.isfinite(pts)):
        raise ConfigError("evaluation grid must be finite")

    h2 = cfg.bandwidths.h2
    lam_grid = cfg.lambda_grid
    m_count = lam_grid.size
    beta = index.beta

    t0 = data.w @ beta
    g0, _, ok_all = batch_local_linear(pts, t0, data.y, h2)
    ok_all = ok_all & (pts >= t0.min()) & (pts <= t0.max())
    averaged = np.zeros((m_count, pts.size))
    averaged[0] = np.where(ok_all, g0, 0.0)

    if me.is_zero:
        averaged[1:] = averaged[0]
    else:
        for b in range(int(cfg.b_reps)):
            pseudo = pseudo_noise_rng(cfg.seed, b).standard_normal((data.n, data.p))
            for m in range(1, m_count):
                t_m = remeasure(data, me, lam_grid[m], pseudo) @ beta
                g_m, _, ok_m = batch_local_linear(pts, t_m, data.y, h2)
                ok_m = ok_m & (pts >= t_m.min()) & (pts <= t_m.max())
                ok_all &= ok_m
                averaged[m] += np.where(ok_m, g_m, 0.0)
        averaged[1:] /= cfg.b_reps

    if not ok_all.any():
        raise SingularFit("link smoothing failed at every evaluation point")
    kept = np.flatnonzero(ok_all)
    excluded = np.flatnonzero(~ok_all)
    per_lambda = averaged[:, kept]

    g_simex = np.empty(kept.size)
    for idx in range(kept.size):
        _, g_simex[idx] = quadratic_extrapolate(lam_grid, per_lambda[:, idx])

    return LinkEstimate(
        grid=pts[kept],
        g_simex=g_simex,
        g_naive=per_lambda[0].copy(),
        per_lambda=per_lambda,
        excluded=excluded,
        lambda_grid=lam_grid,
    )
