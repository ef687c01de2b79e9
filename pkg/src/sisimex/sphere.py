"""Delete-one-coordinate parameterization of the unit sphere.

A unit index vector with a known-positive anchor coordinate is identified
with the remaining p-1 free coordinates, which live strictly inside the
unit ball. Estimation runs in the reduced space; expansion restores the
anchor coordinate as sqrt(1 - ||reduced||^2). The Jacobian of the
expansion maps reduced-space steps back to the sphere's tangent space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, OutOfBall

UNIT_NORM_TOL = 1e-12
MIN_ANCHOR = 1e-12


def _readonly(values) -> np.ndarray:
    out = np.array(values, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class UnitIndex:
    """A unit-norm index vector with a positive anchor coordinate."""

    beta: np.ndarray
    anchor: int

    def __post_init__(self):
        beta = _readonly(self.beta)
        object.__setattr__(self, "beta", beta)
        if beta.ndim != 1 or beta.shape[0] < 2:
            raise ConfigError("index vector must be 1-d with length >= 2")
        if not np.all(np.isfinite(beta)):
            raise ConfigError("index vector must be finite")
        if not 0 <= self.anchor < beta.shape[0]:
            raise ConfigError(f"anchor {self.anchor} out of range")
        if abs(np.linalg.norm(beta) - 1.0) > UNIT_NORM_TOL:
            raise ConfigError("index vector must have unit norm")
        if not beta[self.anchor] > 0:
            raise ConfigError("anchor coordinate must be positive")


@dataclass(frozen=True)
class ReducedIndex:
    """Free coordinates of a unit index after dropping the anchor."""

    values: np.ndarray
    anchor: int

    def __post_init__(self):
        values = _readonly(self.values)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.shape[0] < 1:
            raise ConfigError("reduced vector must be 1-d with length >= 1")
        if not np.all(np.isfinite(values)):
            raise ConfigError("reduced vector must be finite")
        if self.anchor < 0 or self.anchor > values.shape[0]:
            raise ConfigError(f"anchor {self.anchor} out of range")
        if np.linalg.norm(values) >= 1.0:
            raise OutOfBall("reduced vector must have norm < 1")


def reduce_index(index: UnitIndex) -> ReducedIndex:
    """Drop the anchor coordinate."""
    beta = index.beta
    values = np.delete(beta, index.anchor)
    return ReducedIndex(values=values, anchor=index.anchor)


def expand_index(reduced: ReducedIndex) -> UnitIndex:
    """Insert sqrt(1 - ||values||^2) back at the anchor position."""
    v = reduced.values
    sq = float(v @ v)
    if sq >= 1.0:
        raise OutOfBall("reduced vector must have norm < 1")
    anchor_value = np.sqrt(1.0 - sq)
    beta = np.insert(v, reduced.anchor, anchor_value)
    return UnitIndex(beta=beta, anchor=reduced.anchor)


def expand_jacobian(reduced: ReducedIndex) -> np.ndarray:
    """Jacobian of expand_index, shape (p, p-1).

    Rows for retained coordinates are unit vectors; the anchor row is
    -values / sqrt(1 - ||values||^2).
    """
    v = reduced.values
    sq = float(v @ v)
    if sq >= 1.0:
        raise OutOfBall("reduced vector must have norm < 1")
    k = v.shape[0]
    jac = np.insert(np.eye(k), reduced.anchor, -v / np.sqrt(1.0 - sq), axis=0)
    return jac


def align_sign(candidate, reference) -> np.ndarray:
    """Flip candidate's sign when it points away from reference.

    Orthogonal vectors (zero inner product) are returned unchanged.
    """
    cand = np.asarray(candidate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if cand.shape != ref.shape:
        raise ConfigError("candidate and reference must have equal shape")
    if not cand.any() or not ref.any():
        raise ConfigError("sign alignment needs nonzero vectors")
    if float(cand @ ref) < 0.0:
        return -cand
    return cand.copy()


def unit_index_from(vector, prefer_anchor: int | None = None) -> UnitIndex:
    """Normalize a vector to a UnitIndex with a positive anchor.

    Keeps prefer_anchor when that coordinate stays usably positive after
    normalization; otherwise anchors at the largest-magnitude coordinate,
    flipping the sign of the whole vector if needed.
    """
    vec = np.asarray(vector, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] < 2:
        raise ConfigError("index vector must be 1-d with length >= 2")
    norm = float(np.linalg.norm(vec))
    if not (np.isfinite(norm) and norm > 0):
        raise ConfigError("cannot normalize a zero or non-finite vector")
    beta = vec / norm
    if prefer_anchor is not None and beta[prefer_anchor] > MIN_ANCHOR:
        return UnitIndex(beta=beta, anchor=prefer_anchor)
    anchor = int(np.argmax(np.abs(beta)))
    if beta[anchor] < 0:
        beta = -beta
    return UnitIndex(beta=beta, anchor=anchor)
