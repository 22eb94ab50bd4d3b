"""Semantic exception hierarchy.

Every contract violation raises one of these instead of a bare ValueError,
so callers can distinguish config mistakes from numerical degeneracies from
file corruption. Plain I/O failures propagate as OSError.
"""


class RobustXidError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVector(RobustXidError):
    """Vector has (near-)zero norm and cannot be projected to the sphere."""


class InvalidTemperature(RobustXidError):
    """Softmax temperature must be a positive finite number."""


class InvalidVariance(RobustXidError):
    """Variance must be a positive finite number."""


class OutOfRange(RobustXidError):
    """Scalar argument outside its documented domain."""


class TooFewSamples(RobustXidError):
    """Sample statistics need at least two observations."""


class InvalidShape(RobustXidError):
    """Array dimensions violate a constructor contract."""


class ShapeMismatch(RobustXidError):
    """Two arrays that must agree in shape do not."""


class IndexOutOfRange(RobustXidError):
    """Instance index outside [0, N)."""


class TooManyNegatives(RobustXidError):
    """Requested more negatives than there are other instances."""


class DegenerateScores(RobustXidError):
    """Correspondence scores are all (nearly) identical; no spread to weight by."""


class DegenerateLabels(RobustXidError):
    """Both label values are required but only one is present."""


class InvalidTarget(RobustXidError):
    """Target distribution is malformed (negative mass or does not sum to 1)."""


class AllZeroWeights(RobustXidError):
    """Weighted loss is undefined when every sample weight is zero."""


class StaleCache(RobustXidError):
    """Backward called with a cache from before a parameter update."""


class InvalidRange(RobustXidError):
    """Histogram range is empty or does not cover the data."""


class InsufficientSamples(RobustXidError):
    """Not enough samples per class for the requested probe."""


class InvalidConfig(RobustXidError):
    """Configuration value or key violates the schema."""


class FormatError(RobustXidError):
    """File does not parse as the expected binary format."""


class VersionMismatch(FormatError):
    """File carries an unsupported format version."""


class CorruptRecord(FormatError):
    """File payload is truncated or has trailing garbage."""
