"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3,
``EstimationError`` -> 4.
"""


class IcapmBreaksError(Exception):
    """Base class for all package errors."""


class ConfigError(IcapmBreaksError, ValueError):
    """Invalid settings, infeasible trimming, malformed spec files."""


class DataError(IcapmBreaksError, ValueError):
    """Malformed or inconsistent input data."""


class GapError(DataError):
    """A calendar month is missing from a monthly series."""

    def __init__(self, message, missing=None, row=None):
        super().__init__(message)
        self.missing = missing
        self.row = row


class DegenerateMomentsError(DataError):
    """Moment-based statistics requested for a constant series."""


class SaturationError(IcapmBreaksError, OverflowError):
    """exp() argument too large to represent."""


class ConditioningError(IcapmBreaksError, ArithmeticError):
    """A conditional covariance matrix is numerically singular."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class EstimationError(IcapmBreaksError, RuntimeError):
    """QML optimization failed from every start."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InfeasibleError(ConfigError):
    """Break count, trimming and sample size are incompatible."""


class NotApplicable(IcapmBreaksError):
    """A sequential test has no segment long enough for another break."""


class UndefinedIntervalError(IcapmBreaksError, ValueError):
    """A break confidence interval is requested where the mean does not shift."""
