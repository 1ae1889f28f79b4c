"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage 1, data/format 2, numeric 3.
"""


class MultiFlowError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MultiFlowError, ValueError):
    """Invalid shapes, hyperparameters or model configuration."""


class UsageError(MultiFlowError, RuntimeError):
    """API misuse, e.g. calling backward on an empty tape."""


class DataError(MultiFlowError, ValueError):
    """Malformed or inconsistent input data."""


class FormatError(DataError):
    """A binary or JSON file does not follow its declared layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MetricError(DataError):
    """A metric is undefined for the given labels."""


class NumericError(MultiFlowError, ArithmeticError):
    """Non-finite values appeared during a computation."""
