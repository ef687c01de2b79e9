"""Estimating-equation solver for the index direction.

The index is estimated by Fisher scoring in the reduced sphere
coordinates. At each iterate the link and its derivative are refitted by
local linear smoothing of the responses on the current index values; the
score averages (residual * slope * reduced covariate) over observations.
A proposed step is renormalized back to the unit sphere and accepted only
if it does not increase the residual sum of squares of the smoothed fit,
halving the step up to 10 times otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import (
    ConfigError,
    RankDeficient,
    SingularFit,
    SingularInformation,
    ZeroSlope,
)
from .smoothing import _fit_batch, batch_local_linear
from .sphere import ReducedIndex, UnitIndex, expand_index, expand_jacobian, unit_index_from

INFO_RIDGE_REL = 1e-10
MIN_SLOPE_REL = 1e-10
MAX_HALVINGS = 10
# A step may not increase the objective beyond this relative slack.
OBJECTIVE_SLACK = 1e-12
REANCHOR_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Bandwidths and stopping rules for the scoring iteration.

    h smooths the link fit, h1 its derivative. Iteration stops when the
    score norm falls to tol_residual or an accepted step moves the index
    by at most tol_step.
    """

    h: float
    h1: float
    max_iter: int = 100
    tol_step: float = 1e-8
    tol_residual: float = 1e-6

    def __post_init__(self):
        for name in ("h", "h1", "tol_step", "tol_residual"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {value!r}")
        if not (isinstance(self.max_iter, int) and self.max_iter >= 1):
            raise ConfigError(f"max_iter must be an integer >= 1, got {self.max_iter!r}")


@dataclass(frozen=True)
class SolverResult:
    """Solution of the estimating equation.

    iterations counts accepted update steps. residual_norm is the score
    norm at the last iterate where the score was evaluated; after a
    step-size stop it therefore refers to the iterate preceding the final
    small step.
    """

    beta: UnitIndex
    iterations: int
    residual_norm: float
    converged: bool


def initial_beta(data: Dataset) -> UnitIndex:
    """Starting direction from an ordinary least squares fit on (1, w).

    The slope vector is normalized to unit length and sign-fixed so its
    largest-magnitude coordinate is positive; that coordinate anchors the
    sphere parameterization.
    """
    design = np.column_stack([np.ones(data.n), data.w])
    coef, _, rank, _ = np.linalg.lstsq(design, data.y, rcond=None)
    if rank < data.p + 1:
        raise RankDeficient(
            f"starting-value design has rank {rank}, need {data.p + 1}"
        )
    slope = coef[1:]
    scale = max(1.0, abs(float(np.mean(data.y))))
    if float(np.linalg.norm(slope)) <= MIN_SLOPE_REL * scale:
        raise ZeroSlope("starting-value regression slope is numerically zero")
    return unit_index_from(slope)


def least_squares_objective(beta_vector, data: Dataset, h: float) -> float:
    """Residual sum of squares of the local linear fit along an index."""
    beta = np.asarray(beta_vector, dtype=np.float64)
    t = data.w @ beta
    g, _, ok = batch_local_linear(t, t, data.y, h)
    if not ok.all():
        raise SingularFit("smoothing failed at some index values")
    resid = data.y - g
    return float(resid @ resid)


def _smooth_fits(beta: np.ndarray, data: Dataset, cfg: SolverConfig):
    """Link values at bandwidth h and link slopes at bandwidth h1."""
    t = data.w @ beta
    g, _, ok_g = batch_local_linear(t, t, data.y, cfg.h)
    _, gp, ok_p = batch_local_linear(t, t, data.y, cfg.h1)
    if not (ok_g.all() and ok_p.all()):
        raise SingularFit("smoothing failed at some index values")
    return g, gp


def estimating_function(reduced: ReducedIndex, data: Dataset, cfg: SolverConfig):
    """Score vector and scoring matrix at the given reduced coordinates.

    The score is the average over observations of
    (y - ghat) * ghat_slope * (jacobian.T @ w); the scoring matrix is the
    matching slope-weighted Gram matrix of the reduced covariates.
    """
    index = expand_index(reduced)
    g, gp = _smooth_fits(index.beta, data, cfg)
    jac = expand_jacobian(reduced)
    a = data.w @ jac
    resid = data.y - g
    score = a.T @ (resid * gp) / data.n
    info = (a * (gp * gp)[:, None]).T @ a / data.n
    return score, info


def _project_to_sphere(raw: np.ndarray, beta: np.ndarray, anchor: int):
    """Renormalize a proposed iterate; keeps it on the reference's side.

    Returns (trial, trial_anchor), re-anchoring to the largest-magnitude
    coordinate when the current anchor coordinate drops to ~zero, or
    (None, anchor) for a degenerate proposal.
    """
    norm = float(np.linalg.norm(raw))
    if not (np.isfinite(norm) and norm > 0):
        return None, anchor
    trial = raw / norm
    if float(trial @ beta) < 0:
        trial = -trial
    trial_anchor = anchor
    if trial[anchor] <= REANCHOR_TOL:
        trial_anchor = int(np.argmax(np.abs(trial)))
        if trial[trial_anchor] < 0:
            trial = -trial
    return trial, trial_anchor


def _score_state(beta: np.ndarray, anchor: int, data: Dataset, cfg: SolverConfig,
                 t: np.ndarray | None = None, g: np.ndarray | None = None):
    """Objective, score, and scoring pieces at one iterate.

    t and g may carry index values and link fits already computed for an
    accepted line-search trial so they are not refit here.
    """
    y = data.y
    if t is None:
        t = data.w @ beta
    if g is None:
        g, _, ok = _fit_batch(t, t, y, cfg.h, True)
        if not ok.all():
            raise SingularFit("smoothing failed at some index values")
    _, gp, ok = _fit_batch(t, t, y, cfg.h1, True)
    if not ok.all():
        raise SingularFit("smoothing failed at some index values")
    resid = y - g
    objective = float(resid @ resid)
    reduced = ReducedIndex(values=np.delete(beta, anchor), anchor=anchor)
    jac = expand_jacobian(reduced)
    a = data.w @ jac
    score = a.T @ (resid * gp) / data.n
    return objective, score, gp, jac, a, resid


def solve(data: Dataset, cfg: SolverConfig, start: UnitIndex,
          trace: list | None = None) -> SolverResult:
    """Fisher scoring for the index direction from a given start.

    Step control: backtracking (up to 10 halvings) accepts the first scale
    that does not increase the smoothed residual sum of squares; this
    guards against overshooting without moving the fixed point. Near the
    root that objective and the score decouple (the score is not its exact
    gradient once smoother-weight movement matters), so when no scale
    passes, damped steps are instead accepted on a strict decrease of the
    score norm. After an iteration resolved by the score-norm rule the
    next one tries that rule first, falling back to the objective rule,
    so iterations near the root do not re-run a doomed backtracking pass.
    If neither rule admits a step the solver stops with converged=False.

    Raises SingularFit when smoothing collapses at the current iterate and
    SingularInformation when the ridge-guarded scoring matrix cannot be
    inverted. When `trace` is a list, one entry per accepted step is
    appended (plus a "start" entry) with the objective, branch, scale, and
    pre-step score norm, for inspecting the step-control behavior.
    """
    if data.p < 2:
        raise ConfigError("index estimation needs at least two covariates")
    y = data.y
    w = data.w
    n = data.n
    beta = np.array(start.beta, dtype=np.float64)
    anchor = start.anchor
    iterations = 0
    converged = False
    residual_norm = np.inf
    prefer_fallback = False
    carried_state = None
    carried_fit = None  # (t, g) from an accepted objective-branch trial
    for _ in range(cfg.max_iter):
        if carried_state is not None:
            objective, score, gp, jac, a, resid = carried_state
        elif carried_fit is not None:
            objective, score, gp, jac, a, resid = _score_state(
                beta, anchor, data, cfg, t=carried_fit[0], g=carried_fit[1])
        else:
            objective, score, gp, jac, a, resid = _score_state(beta, anchor, data, cfg)
        carried_state = None
        carried_fit = None
        residual_norm = float(np.linalg.norm(score))
        if trace is not None and not trace:
            trace.append({"objective": objective, "branch": "start",
                          "scale": 0.0, "residual": residual_norm})
        if residual_norm <= cfg.tol_residual:
            converged = True
            break
        info = (a * (gp * gp)[:, None]).T @ a / n
        ridge = INFO_RIDGE_REL * float(np.trace(info))
        try:
            delta = np.linalg.solve(info + ridge * np.eye(info.shape[0]), score)
        except np.linalg.LinAlgError as exc:
            raise SingularInformation("scoring matrix is singular") from exc
        if not np.all(np.isfinite(delta)):
            raise SingularInformation("scoring step is not finite")
        direction = jac @ delta
        if float(np.linalg.norm(direction)) <= cfg.tol_step:
            # the undamped update itself is below resolution
            converged = True
            break

        def try_objective():
            scale = 1.0
            for _ in range(MAX_HALVINGS + 1):
                trial, trial_anchor = _project_to_sphere(
                    beta + scale * direction, beta, anchor)
                if trial is not None:
                    t_trial = w @ trial
                    g_trial, _, ok = _fit_batch(t_trial, t_trial, y, cfg.h, True)
                    if ok.all():
                        r_trial = y - g_trial
                        obj_trial = float(r_trial @ r_trial)
                        if obj_trial <= objective + OBJECTIVE_SLACK * max(1.0, objective):
                            return (trial, trial_anchor, obj_trial, scale,
                                    None, (t_trial, g_trial))
                scale *= 0.5
            return None

        def try_residual():
            scale = 1.0
            for _ in range(MAX_HALVINGS + 1):
                trial, trial_anchor = _project_to_sphere(
                    beta + scale * direction, beta, anchor)
                if trial is not None:
                    try:
                        state = _score_state(trial, trial_anchor, data, cfg)
                    except SingularFit:
                        pass
                    else:
                        if float(np.linalg.norm(state[1])) < residual_norm:
                            return (trial, trial_anchor, state[0], scale,
                                    state, None)
                scale *= 0.5
            return None

        if prefer_fallback:
            branch, hit = "residual", try_residual()
            if hit is None:
                branch, hit = "objective", try_objective()
        else:
            branch, hit = "objective", try_objective()
            if hit is None:
                branch, hit = "residual", try_residual()
        if hit is None:
            break
        cand, cand_anchor, cand_objective, scale, carried_state, carried_fit = hit
        prefer_fallback = branch == "residual"
        step = float(np.linalg.norm(cand - beta))
        beta = cand
        anchor = cand_anchor
        iterations += 1
        if trace is not None:
            trace.append({"objective": cand_objective, "branch": branch,
                          "scale": scale, "residual": residual_norm})
        # a tiny damped step says nothing about the fixed point, so the
        # step-size stop only applies to full (unhalved) steps
        if scale == 1.0 and step <= cfg.tol_step:
            converged = True
            break
    return SolverResult(
        beta=UnitIndex(beta=beta, anchor=anchor),
        iterations=iterations,
        residual_norm=residual_norm,
        converged=converged,
    )
