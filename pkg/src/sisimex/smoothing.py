"""Local linear kernel smoothing on a scalar index.

Given index values t_i and responses y_i, the smoother fits a weighted
straight line around an evaluation point t0; the intercept estimates the
regression function there and the slope estimates its derivative. Weights
come from a compactly supported kernel scaled by a bandwidth, so a fit is
only defined when the window holds at least two observations at distinct
index values that bracket t0 (an observation at t0 itself counts for
both sides). One-sided windows are rejected rather than fitted: their
line is an extrapolation whose value at t0 has unbounded leverage.
Callers that cannot tolerate a dead window get automatic bandwidth
inflation (factor 1.5, at most 8 times) before the fit is declared
singular.

The closed-form weights are exposed separately (`smoother_weights`) so the
algebraic identities of local linear smoothing can be checked directly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularFit

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

INFLATION_FACTOR = 1.5
MAX_INFLATIONS = 8

# Relative ridge on the 2x2 weighted normal matrix; absorbs near-collinear
# windows without visibly perturbing well-posed fits.
RIDGE_REL = 1e-12


class KernelFamily(enum.Enum):
    EPANECHNIKOV = "epanechnikov"


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family together with a bandwidth."""

    bandwidth: float
    family: KernelFamily = KernelFamily.EPANECHNIKOV

    def __post_init__(self):
        if not isinstance(self.family, KernelFamily):
            raise ConfigError(f"unknown kernel family: {self.family!r}")
        h = self.bandwidth
        if not (isinstance(h, (int, float)) and np.isfinite(h) and h > 0):
            raise ConfigError(f"bandwidth must be finite and > 0, got {h!r}")


@dataclass(frozen=True)
class LocalLinearFit:
    """Result of a single local linear fit.

    bandwidth_used reflects any inflation applied; effective_n counts the
    observations with nonzero kernel weight at that bandwidth.
    """

    value: float
    slope: float
    bandwidth_used: float
    effective_n: int


def kernel_eval(u, spec: KernelSpec):
    """Scaled kernel value(s) (1/h) * K(u/h); zero outside |u| < h."""
    h = spec.bandwidth
    z = np.asarray(u, dtype=np.float64) / h
    out = np.where(np.abs(z) < 1.0, 0.75 * (1.0 - z * z), 0.0) / h
    if np.ndim(u) == 0:
        return float(out)
    return out


def kernel_moments(t0: float, index_values, spec: KernelSpec):
    """Empirical local moments (s0, s1, s2, s3).

    s_l = (1/n) * sum_i (t_i - t0)^l * K_h(t_i - t0).
    """
    t = np.asarray(index_values, dtype=np.float64)
    d = t - t0
    k = kernel_eval(d, spec)
    return (
        float(np.mean(k)),
        float(np.mean(k * d)),
        float(np.mean(k * d * d)),
        float(np.mean(k * d * d * d)),
    )


def smoother_weights(t0: float, index_values, spec: KernelSpec):
    """Closed-form local linear weights at t0 for the given bandwidth.

    Returns (m, m_tilde): the fitted value is m @ y and the fitted slope
    is m_tilde @ y. Raises SingularFit when the weight denominator is zero
    at this bandwidth (no inflation is attempted here; the weights are
    specific to the bandwidth asked for).
    """
    t = np.asarray(index_values, dtype=np.float64)
    d = t - t0
    k = kernel_eval(d, spec)
    inside = t[k > 0.0]
    # bare algebraic validity: two observations at distinct index values.
    # The fitting core additionally requires the window to bracket t0;
    # here the closed-form weights are exposed for identity checks, which
    # hold for any window with a nonzero denominator.
    if inside.size < 2 or inside.max() <= inside.min():
        raise SingularFit(f"degenerate smoothing window at t0={t0!r}")
    s0 = np.mean(k)
    s1 = np.mean(k * d)
    s2 = np.mean(k * d * d)
    n = t.shape[0]
    denom = n * (s0 * s2 - s1 * s1)
    if denom == 0.0:
        raise SingularFit(f"degenerate smoothing window at t0={t0!r}")
    m = k * (s2 - d * s1) / denom
    m_tilde = k * (d * s0 - s1) / denom
    return m, m_tilde


# --- batched fitting core -------------------------------------------------
#
# Two implementations of the same arithmetic: a loop version (jitted when
# numba imports) and a vectorized numpy fallback. Both return
# (values, slopes, ok, effective_n) and must agree to rounding error.


def _batch_core_loops(t0s, t, y, h):
    m = t0s.shape[0]
    n = t.shape[0]
    a = np.empty(m, dtype=np.float64)
    b = np.empty(m, dtype=np.float64)
    ok = np.empty(m, dtype=np.bool_)
    count = np.empty(m, dtype=np.int64)
    for j in range(m):
        t0 = t0s[j]
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        c0 = 0.0
        c1 = 0.0
        cnt = 0
        t_first = 0.0
        distinct = False
        low_side = False
        high_side = False
        for i in range(n):
            d = t[i] - t0
            u = d / h
            if -1.0 < u < 1.0:
                w = 0.75 * (1.0 - u * u) / h
                if w > 0.0:
                    if cnt == 0:
                        t_first = t[i]
                    elif t[i] != t_first:
                        distinct = True
                    cnt += 1
                    if d <= 0.0:
                        low_side = True
                    if d >= 0.0:
                        high_side = True
                    wd = w * d
                    s0 += w
                    s1 += wd
                    s2 += wd * d
                    c0 += w * y[i]
                    c1 += wd * y[i]
        good = cnt >= 2 and distinct and low_side and high_side
        if good:
            r = RIDGE_REL * (s0 + s2)
            det = (s0 + r) * (s2 + r) - s1 * s1
            a[j] = ((s2 + r) * c0 - s1 * c1) / det
            b[j] = ((s0 + r) * c1 - s1 * c0) / det
        else:
            a[j] = np.nan
            b[j] = np.nan
        ok[j] = good
        count[j] = cnt
    return a, b, ok, count


def _batch_core_numpy(t0s, t, y, h):
    d = t[None, :] - t0s[:, None]
    u = d / h
    w = np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u) / h, 0.0)
    pos = w > 0.0
    count = pos.sum(axis=1)
    t_row = np.broadcast_to(t, w.shape)
    t_hi = np.where(pos, t_row, -np.inf).max(axis=1)
    t_lo = np.where(pos, t_row, np.inf).min(axis=1)
    ok = (count >= 2) & (t_hi > t_lo) & (t_lo <= t0s) & (t_hi >= t0s)
    wd = w * d
    s0 = w.sum(axis=1)
    s1 = wd.sum(axis=1)
    s2 = (wd * d).sum(axis=1)
    c0 = w @ y
    c1 = wd @ y
    r = RIDGE_REL * (s0 + s2)
    det = (s0 + r) * (s2 + r) - s1 * s1
    with np.errstate(divide="ignore", invalid="ignore"):
        a = ((s2 + r) * c0 - s1 * c1) / det
        b = ((s0 + r) * c1 - s1 * c0) / det
    a = np.where(ok, a, np.nan)
    b = np.where(ok, b, np.nan)
    return a, b, ok, count.astype(np.int64)


if HAVE_NUMBA:
    _batch_core = njit(cache=True)(_batch_core_loops)
else:  # pragma: no cover - numba is a declared dependency
    _batch_core = _batch_core_numpy


def _fit_batch(t0s, t, y, h, inflate):
    """Core fits plus per-level bandwidth inflation; no validation.

    Callers must pass contiguous float64 arrays. Points still singular
    after MAX_INFLATIONS keep ok=False and nan outputs.
    """
    a, b, ok, _ = _batch_core(t0s, t, y, h)
    if inflate and not ok.all():
        bad = np.flatnonzero(~ok)
        level = h
        for _ in range(MAX_INFLATIONS):
            if bad.size == 0:
                break
            level *= INFLATION_FACTOR
            aj, bj, okj, _ = _batch_core(np.ascontiguousarray(t0s[bad]), t, y, level)
            fixed = bad[okj]
            a[fixed] = aj[okj]
            b[fixed] = bj[okj]
            ok[fixed] = True
            bad = bad[~okj]
    return a, b, ok


def batch_local_linear(eval_points, index_values, responses, bandwidth,
                       inflate: bool = True):
    """Local linear fits at many evaluation points with one bandwidth.

    Returns (values, slopes, ok). Where ok is False the outputs are nan;
    with inflate=True such points were already retried at bandwidths
    inflated by 1.5 up to 8 times before being given up on.
    """
    t0s = np.ascontiguousarray(eval_points, dtype=np.float64)
    t = np.ascontiguousarray(index_values, dtype=np.float64)
    y = np.ascontiguousarray(responses, dtype=np.float64)
    if t.shape != y.shape or t.ndim != 1:
        raise ConfigError("index_values and responses must be equal-length 1-d")
    h = float(bandwidth)
    if not (np.isfinite(h) and h > 0):
        raise ConfigError(f"bandwidth must be finite and > 0, got {bandwidth!r}")
    return _fit_batch(t0s, t, y, h, inflate)


def local_linear_fit(t0: float, index_values, responses,
                     spec: KernelSpec) -> LocalLinearFit:
    """Single local linear fit with automatic bandwidth inflation.

    Raises SingularFit when no bandwidth up to spec.bandwidth * 1.5**8
    yields a window with two observations at distinct index values
    bracketing t0.
    """
    t = np.ascontiguousarray(index_values, dtype=np.float64)
    y = np.ascontiguousarray(responses, dtype=np.float64)
    if t.shape != y.shape or t.ndim != 1:
        raise ConfigError("index_values and responses must be equal-length 1-d")
    t0s = np.array([t0], dtype=np.float64)
    h = spec.bandwidth
    for _ in range(MAX_INFLATIONS + 1):
        a, b, ok, count = _batch_core(t0s, t, y, h)
        if ok[0]:
            return LocalLinearFit(value=float(a[0]), slope=float(b[0]),
                                  bandwidth_used=h, effective_n=int(count[0]))
        h *= INFLATION_FACTOR
    raise SingularFit(
        f"no valid smoothing window at t0={t0!r} after {MAX_INFLATIONS} "
        f"bandwidth inflations from {spec.bandwidth!r}"
    )
