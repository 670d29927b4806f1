"""Exception hierarchy shared by every seasoncast module."""


class SeasoncastError(Exception):
    """Base class for all package errors."""


# -- data ingestion / assembly ------------------------------------------------


class DataError(SeasoncastError):
    """Problems with input data; the CLI maps these to exit code 3."""


class MissingFile(DataError, FileNotFoundError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class NonMonotonicTime(DataError, ValueError):
    pass


class DuplicateVariable(DataError, ValueError):
    pass


class EmptyVariableList(DataError, ValueError):
    pass


class OutOfRangeMonth(DataError, ValueError):
    pass


class InsufficientHistory(DataError, ValueError):
    pass


class UnknownVariable(DataError, KeyError):
    pass


class EmptySet(DataError, ValueError):
    pass


class BadFraction(SeasoncastError, ValueError):
    pass


# -- numerics -----------------------------------------------------------------


class ZeroVariance(SeasoncastError, ValueError):
    pass


class DimensionMismatch(SeasoncastError, ValueError):
    pass


class EmptyData(SeasoncastError, ValueError):
    pass


class NonScalarLoss(SeasoncastError, ValueError):
    pass


class DivergenceDetected(SeasoncastError, FloatingPointError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, message, model=None, season=None):
        super().__init__(message)
        self.model = model
        self.season = season


# -- metrics ------------------------------------------------------------------


class LengthMismatch(SeasoncastError, ValueError):
    pass


class Empty(SeasoncastError, ValueError):
    pass


class ConstantObservations(SeasoncastError, ValueError):
    pass


class GridMismatch(SeasoncastError, ValueError):
    pass


# -- explanation --------------------------------------------------------------


class TooManyFeatures(SeasoncastError, ValueError):
    pass


class EmptyBackground(SeasoncastError, ValueError):
    pass


class Inconsistent(SeasoncastError, ValueError):
    pass


# -- orchestration ------------------------------------------------------------


class ConfigError(SeasoncastError, ValueError):
    """Invalid run configuration; the CLI maps these to exit code 2."""


class SeasonMismatch(SeasoncastError, ValueError):
    pass
