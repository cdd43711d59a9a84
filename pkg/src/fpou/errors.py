"""Exception types shared across the package."""

from __future__ import annotations


class FpouError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FpouError, ValueError):
    pass


class NumericFailureError(FpouError, ArithmeticError):
    """Raised when an adaptive integration does not converge.

    Carries the best estimate found and its error bound so callers can
    decide whether the result is still usable.
    """

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class ResourceLimitError(FpouError, MemoryError):
    pass


class FormatError(FpouError, ValueError):
    """Cache or input file failed validation."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DegeneratePathError(FpouError, ArithmeticError):
    """Estimator denominator vanished (the path carries no information)."""


class CorruptedInputError(FpouError, ValueError):
    pass


class SingularMatrixError(FpouError, ArithmeticError):
    pass
