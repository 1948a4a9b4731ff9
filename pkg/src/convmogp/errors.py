"""Exception types raised across the package."""


class ConvGPError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(ConvGPError, ValueError):
    """An argument violates a documented precondition."""


class NumericFailureError(ConvGPError, ArithmeticError):
    """A factorization failed even after jitter escalation.

    The ``matrix`` attribute names the offending matrix.
    """

    def __init__(self, matrix, message=None):
        self.matrix = matrix
        super().__init__(message or f"Cholesky factorization of {matrix} failed")


class OptimizerStalledError(ConvGPError, RuntimeError):
    """The optimizer could not make progress; ``trace`` holds the history."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class DegenerateCurvatureError(ConvGPError, ArithmeticError):
    """A curvature that should be negative at a maximum is not."""

    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(
            f"non-negative curvature {value:.6g} for sensitivity of output {index}"
        )


class ConfigError(ConvGPError, ValueError):
    """A run configuration document is malformed."""


class DataError(ConvGPError, ValueError):
    """A dataset or prediction file could not be parsed or is incompatible."""
