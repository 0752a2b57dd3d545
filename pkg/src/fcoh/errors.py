"""Exception hierarchy shared by the library and the command line tool."""


class FcohError(Exception):
    """Base class for all package errors."""


class ShapeError(FcohError, ValueError):
    """Operand dimensions do not agree."""


class NumericalError(FcohError, FloatingPointError):
    """A computation produced NaN or Inf."""


class DataError(FcohError):
    """Input data could not be read or is invalid."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class NonFiniteFeatureError(DataError):
    pass


class InfeasibleSplitError(DataError):
    pass


class CheckpointError(DataError):
    """Checkpoint or table dump is unreadable or corrupted."""


class ConfigError(FcohError):
    """Bad run configuration (maps to the usage exit code)."""
