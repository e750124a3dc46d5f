"""Exception types raised across the package."""


class PosecastError(Exception):
    """Base class for all package errors."""


class DegenerateRotation(PosecastError, ValueError):
    """A 6D rotation token cannot be orthonormalized."""


class SequenceTooShort(PosecastError, ValueError):
    pass


class NonPositiveDepth(PosecastError, ValueError):
    """A pose sits at or behind the camera plane."""


class AlreadyFrozen(PosecastError, RuntimeError):
    pass


class UnfrozenStats(PosecastError, RuntimeError):
    pass


class InvalidCounts(PosecastError, ValueError):
    pass


class ShapeMismatch(PosecastError, ValueError):
    pass


class LengthMismatch(PosecastError, ValueError):
    pass


class InvalidSpec(PosecastError, ValueError):
    pass


class BehindCamera(PosecastError, ValueError):
    pass


class DimensionMismatch(PosecastError, ValueError):
    pass


class NoValidFrames(PosecastError, ValueError):
    pass


class AlreadyLocked(PosecastError, RuntimeError):
    pass


class DataMismatch(PosecastError, ValueError):
    """Dataset windows do not match the requested context/horizon."""


class FormatError(PosecastError, ValueError):
    """A binary or text file does not follow its documented layout."""


class NumericFailure(PosecastError, FloatingPointError):
    """NaN or Inf appeared where a finite value is required."""
