"""Exception hierarchy shared across the package."""


class MTEnsembleError(Exception):
    """Base class for all package errors."""


class DimensionError(MTEnsembleError, ValueError):
    """Operand shapes do not agree."""


class ParameterError(MTEnsembleError, ValueError):
    """A hyperparameter is outside its valid range."""


class UsageError(MTEnsembleError, RuntimeError):
    """An API was called in the wrong state (e.g. optimizer step without gradient)."""


class ConfigurationError(MTEnsembleError, ValueError):
    """A model or run configuration is invalid."""


class NumericError(MTEnsembleError, FloatingPointError):
    """Training produced a non-finite loss."""


class UndefinedMetricError(MTEnsembleError, ValueError):
    """A metric is mathematically undefined on the given input."""


class DataError(MTEnsembleError, ValueError):
    """Input data could not be used."""


class FormatError(DataError):
    """A file does not follow its declared format."""


class AlignmentError(DataError):
    """Instance ids do not line up across sources."""


class IncompatibilityError(MTEnsembleError, ValueError):
    """A checkpoint does not match the requested architecture."""
