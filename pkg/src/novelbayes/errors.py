"""Exception hierarchy shared across the package.

Two broad families matter to callers (and to the CLI exit codes):
``DataError`` for malformed or insufficient input, ``NumericalError``
for linear-algebra / degeneracy failures discovered while computing.
"""


class NoveltyError(Exception):
    """Base class for all package-specific errors."""


class DataError(NoveltyError):
    """Invalid, malformed, or insufficient input data."""


class NumericalError(NoveltyError):
    """Numerical failure (singularity, non-SPD matrix, degenerate fit)."""


class InsufficientRows(DataError):
    """Subset size h is too small for the requested estimator."""


class SingularSubset(NumericalError):
    """An h-subset covariance is singular; MCD is ill-defined here."""


class DegenerateData(DataError):
    """All observations identical (no scatter to estimate)."""


class NotPositiveDefinite(NumericalError):
    """A matrix required to be SPD failed its Cholesky factorization."""


class EmptySlice(DataError):
    """No slice variables supplied to the truncation rule."""


class AllSlicesEmpty(NumericalError):
    """No eligible mixture component for some unit (sampler invariant broken)."""


class GridMismatch(DataError):
    """Curve sets evaluated on different grids cannot be combined."""


class InvalidKnots(DataError):
    """B-spline specification produces an unusable knot vector."""


class RankDeficientBasis(NumericalError):
    """Basis matrix does not have full column rank at the given grid."""


class ParseError(DataError):
    """A data file could not be parsed; message carries row/column info."""


class DimensionMismatch(DataError):
    """Arrays that must agree in shape do not."""


class LengthMismatch(DataError):
    """Paired vectors (e.g. two partitions) differ in length."""
