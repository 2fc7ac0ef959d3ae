"""Exception types raised by calgp."""


class CalGPError(Exception):
    """Base class for all library errors."""


class ConfigError(CalGPError, ValueError):
    """Invalid user configuration (bad split fractions, unknown method, ...)."""


class DataError(CalGPError, ValueError):
    """Malformed input data. Carries the offending row/column when known."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(CalGPError, ArithmeticError):
    """Cholesky factorization failed even after the jitter ladder."""

    def __init__(self, message, jitter=None):
        super().__init__(message)
        self.jitter = jitter


class OptimizationError(CalGPError, RuntimeError):
    """Every restart of an optimizer failed."""


class CalibrationError(CalGPError, RuntimeError):
    """A calibration level could not be repaired into a monotone model."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class QuantileClampWarning(UserWarning):
    """A confidence level or value outside a model's calibrated range was clamped."""
