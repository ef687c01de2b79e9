"""Bandwidth choice: rule-of-thumb scales and cross-validation.

The rule of thumb scales the index-value standard deviation by sample-size
powers: n^(-1/4) (ln n)^(-1/2) for the link fit inside the estimating
equation and for its derivative, and n^(-1/5) for the link-output fit.
Undersmoothing the derivative along with the link keeps the estimating
equation's curvature response on the same scale as its level response;
the output fit stays at the slower rate because it is a plain regression
function estimate, not an input to the root-finding step.
Cross-validation instead scores a grid of candidate scales by K-fold
held-out squared prediction error of the full simulation-extrapolation
fit, then applies the same power conversions to the winner.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, MeasurementErrorSpec
from .errors import ConfigError, DataError, DegenerateIndex, EstimationError
from .solver import initial_beta
from .sphere import UnitIndex

BANDWIDTH_METHODS = ("rt", "cv", "manual")

# Share of failed folds beyond which a candidate is disqualified.
MAX_FOLD_FAILURE_SHARE = 0.2

DEFAULT_FOLDS = 10
DEFAULT_CANDIDATE_COUNT = 10
DEFAULT_CANDIDATE_RANGE = (0.3, 3.0)


@dataclass(frozen=True)
class BandwidthSet:
    """Bandwidth triple: h for the link fit inside the estimating
    equation, h1 for its derivative, h2 for link output on a grid."""

    h: float
    h1: float
    h2: float
    method: str = "rt"

    def __post_init__(self):
        for name in ("h", "h1", "h2"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {value!r}")
        if self.method not in BANDWIDTH_METHODS:
            raise ConfigError(
                f"method must be one of {BANDWIDTH_METHODS}, got {self.method!r}"
            )


def rule_of_thumb(data: Dataset, index: UnitIndex) -> BandwidthSet:
    """Scale-based bandwidths from the spread of the projected index."""
    t = data.w @ index.beta
    c = float(np.std(t, ddof=1))
    if not (np.isfinite(c) and c > 0):
        raise DegenerateIndex("projected index values are constant")
    n = data.n
    h = c * n ** -0.25 / np.sqrt(np.log(n))
    h2 = c * n ** -0.2
    return BandwidthSet(h=h, h1=h, h2=h2, method="rt")


def cv_bandwidth_set(h_opt: float, n: int) -> BandwidthSet:
    """Bandwidth triple derived from a cross-validated scale."""
    h = h_opt * n ** -0.05 / np.sqrt(np.log(n))
    return BandwidthSet(h=h, h1=h, h2=h_opt, method="cv")


def default_candidates(data: Dataset, index: UnitIndex,
                       count: int = DEFAULT_CANDIDATE_COUNT) -> np.ndarray:
    """Log-spaced candidate scales around the rule-of-thumb h2."""
    if count < 1:
        raise ConfigError(f"need at least 1 candidate, got {count!r}")
    center = rule_of_thumb(data, index).h2
    lo, hi = DEFAULT_CANDIDATE_RANGE
    return np.geomspace(lo * center, hi * center, int(count))


def cv_scores(data: Dataset, me: MeasurementErrorSpec, cfg, candidates,
              folds: int = DEFAULT_FOLDS, loo: bool = False) -> np.ndarray:
    """Held-out squared-error score per candidate scale.

    Folds are assigned round-robin by row index. Each fold runs the full
    simulation-extrapolation fit on the training rows and predicts the
    held-out responses from the link estimate at the held-out index
    values (computed with the held-out surrogates). A candidate with more
    than MAX_FOLD_FAILURE_SHARE failed folds, or with no scorable points,
    gets an infinite score.
    """
    from .simex import estimate_beta, estimate_link

    cand = np.asarray(candidates, dtype=np.float64)
    if cand.ndim != 1 or cand.size < 1:
        raise ConfigError("candidates must be 1-d and nonempty")
    if not np.all(np.isfinite(cand) & (cand > 0)):
        raise ConfigError("candidates must be finite and > 0")
    n = data.n
    if loo:
        folds = n
    folds = int(folds)
    if not 2 <= folds <= n:
        raise ConfigError(f"folds must be in [2, n], got {folds!r}")
    assignment = np.arange(n) % folds

    scores = np.full(cand.size, np.inf)
    for ci, h_opt in enumerate(cand):
        cfg_c = replace(cfg, bandwidths=cv_bandwidth_set(float(h_opt), n))
        total = 0.0
        count = 0
        failed = 0
        for f in range(folds):
            test = assignment == f
            train = ~test
            try:
                fit_data = Dataset(y=data.y[train], w=data.w[train])
                result = estimate_beta(fit_data, me, cfg_c)
                t_test = data.w[test] @ result.beta_simex.beta
                link = estimate_link(fit_data, me, cfg_c, result.beta_simex,
                                     grid=t_test)
                keep = np.ones(t_test.size, dtype=bool)
                keep[link.excluded] = False
                resid = data.y[test][keep] - link.g_simex
                total += float(resid @ resid)
                count += int(keep.sum())
            except (EstimationError, DataError):
                failed += 1
        if failed <= MAX_FOLD_FAILURE_SHARE * folds and count > 0:
            scores[ci] = total / count
    return scores


def select_candidate(candidates, scores) -> int:
    """Position of the best candidate: lowest score, ties to smallest h."""
    cand = np.asarray(candidates, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if cand.shape != s.shape or cand.ndim != 1 or cand.size < 1:
        raise ConfigError("candidates and scores must be equal-length 1-d")
    if not np.isfinite(s).any():
        raise EstimationError("every candidate bandwidth was disqualified")
    best = s.min()
    tied = np.flatnonzero(s == best)
    return int(tied[np.argmin(cand[tied])])


def cv_bandwidth(data: Dataset, me: MeasurementErrorSpec, cfg,
                 candidates=None, folds: int = DEFAULT_FOLDS,
                 loo: bool = False):
    """Cross-validated scale and the bandwidth set derived from it.

    Returns (h_opt, BandwidthSet). Candidates default to a log-spaced
    band around the rule-of-thumb scale of the least-squares start.
    """
    if candidates is None:
        candidates = default_candidates(data, initial_beta(data))
    scores = cv_scores(data, me, cfg, candidates, folds=folds, loo=loo)
    pos = select_candidate(candidates, scores)
    h_opt = float(np.asarray(candidates, dtype=np.float64)[pos])
    return h_opt, cv_bandwidth_set(h_opt, data.n)
