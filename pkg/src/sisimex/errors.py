"""Exception hierarchy shared across the package.

Three branches map onto the CLI exit codes: configuration problems (2),
data problems (3), estimation failures (4).
"""

from __future__ import annotations


class SisimexError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SisimexError, ValueError):
    """A configuration object or argument value is invalid."""


class DataError(SisimexError, ValueError):
    """Input data could not be read or fails validation."""


class ParseError(DataError):
    """A cell of an input file could not be parsed.

    Parameters
    ----------
    row : int
        1-based data row (header excluded).
    column : str
        Column name of the offending cell.
    """

    def __init__(self, row: int, column: str, message: str = ""):
        self.row = row
        self.column = column
        detail = message or "could not parse value"
        super().__init__(f"row {row}, column {column!r}: {detail}")


class MissingColumn(DataError):
    """A required column is absent from an input file."""

    def __init__(self, column: str, message: str = ""):
        self.column = column
        detail = message or "required column missing"
        super().__init__(f"column {column!r}: {detail}")


class EstimationError(SisimexError, RuntimeError):
    """A numerical estimation step failed."""


class SingularFit(EstimationError):
    """A local linear fit has no unique solution at any allowed bandwidth."""


class SingularInformation(EstimationError):
    """The scoring matrix is not invertible even after the ridge guard."""


class SingularDesign(EstimationError):
    """The extrapolation design has fewer than three distinct abscissae."""


class RankDeficient(EstimationError):
    """The starting-value regression design is rank deficient."""


class ZeroSlope(EstimationError):
    """The starting-value regression slope is numerically zero."""


class DegenerateIndex(EstimationError):
    """Projected index values are constant; no bandwidth scale exists."""


class OutOfBall(EstimationError):
    """A reduced index vector has norm >= 1 and cannot be expanded."""


class TooManyFailures(EstimationError):
    """Too large a share of remeasured fits failed at some noise level."""
