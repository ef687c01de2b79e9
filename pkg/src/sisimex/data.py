"""Core data containers: observed samples and measurement-error structure."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

COV_EIG_TOL = 1e-10


def _readonly(values, dtype=np.float64) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Dataset:
    """Responses y (n,) and surrogate covariates w (n, p)."""

    y: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        y = _readonly(self.y)
        w = _readonly(self.w)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)
        if y.ndim != 1 or w.ndim != 2 or w.shape[0] != y.shape[0]:
            raise DataError("need y of shape (n,) and w of shape (n, p)")
        if w.shape[1] < 1:
            raise DataError("need at least one covariate column")
        if w.shape[0] < w.shape[1] + 2:
            raise DataError(
                f"need n >= p + 2 rows, got n={w.shape[0]}, p={w.shape[1]}"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
            raise DataError("responses and covariates must be finite")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class MeasurementErrorSpec:
    """Covariance of the additive covariate noise plus a matrix square root.

    factor satisfies factor @ factor.T == covariance, so standard normal
    draws z map to noise via z @ factor.T. Build instances through
    from_covariance (or zero) so the factor stays consistent.
    """

    covariance: np.ndarray
    factor: np.ndarray

    def __post_init__(self):
        cov = _readonly(self.covariance)
        fac = _readonly(self.factor)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "factor", fac)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ConfigError("covariance must be square")
        if fac.shape != cov.shape:
            raise ConfigError("factor must match covariance shape")
        if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(fac))):
            raise ConfigError("covariance and factor must be finite")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(fac @ fac.T - cov).max() > 1e-8 * scale:
            raise ConfigError("factor does not reproduce the covariance")

    @classmethod
    def from_covariance(cls, covariance) -> "MeasurementErrorSpec":
        """Validate a symmetric PSD covariance and take its symmetric root.

        Eigenvalues within COV_EIG_TOL (relative) below zero are clipped;
        anything more negative is rejected.
        """
        cov = np.asarray(covariance, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ConfigError("covariance must be square")
        if not np.all(np.isfinite(cov)):
            raise ConfigError("covariance must be finite")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > COV_EIG_TOL * scale:
            raise ConfigError("covariance must be symmetric")
        sym = 0.5 * (cov + cov.T)
        eigval, eigvec = np.linalg.eigh(sym)
        if eigval.min() < -COV_EIG_TOL * scale:
            raise ConfigError("covariance must be positive semidefinite")
        root = eigvec @ np.diag(np.sqrt(np.clip(eigval, 0.0, None))) @ eigvec.T
        return cls(covariance=sym, factor=root)

    @classmethod
    def zero(cls, p: int) -> "MeasurementErrorSpec":
        """Error-free surrogates in p coordinates."""
        z = np.zeros((p, p))
        return cls(covariance=z, factor=z.copy())

    @property
    def p(self) -> int:
        return self.covariance.shape[0]

    @property
    def is_zero(self) -> bool:
        return not self.factor.any()
