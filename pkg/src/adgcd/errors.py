"""Exception hierarchy.

``ConfigError`` subclasses map to CLI exit code 2, ``DataError`` subclasses to 3.
"""


class GcdError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GcdError, ValueError):
    pass


class DataError(GcdError, ValueError):
    pass


class InvalidConfig(ConfigError):
    pass


class BadK(ConfigError):
    pass


class EmptyRange(ConfigError):
    pass


class MalformedHeader(DataError):
    pass


class UnknownVersion(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class IoFailure(DataError):
    pass


class MissingLabels(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class EmptyClass(DataError):
    pass


class ZeroVector(DataError):
    pass


class EmptyBatch(DataError):
    pass


class NegativeLoss(DataError):
    pass


class PoolTooSmall(DataError):
    pass


class InsufficientClusters(DataError):
    pass


class InconsistentPins(DataError):
    pass


class NonSquare(DataError):
    pass


class TapeReused(GcdError, RuntimeError):
    pass
