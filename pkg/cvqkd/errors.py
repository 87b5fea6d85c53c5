"""Exception hierarchy for cvqkd."""

from typing import Optional


class CVQKDError(Exception):
    """Base class for every error raised by cvqkd."""


class DomainError(CVQKDError, ValueError):
    """A physical parameter lies outside its admissible range."""


class ConfigError(CVQKDError, ValueError):
    """A configuration file or value is malformed or inconsistent."""


class ArgumentError(CVQKDError, ValueError):
    """A structural argument (mode index, permutation) is invalid."""


class UnphysicalStateError(CVQKDError, ArithmeticError):
    """A covariance matrix violates the uncertainty principle."""

    def __init__(self, message: str, nu: Optional[float] = None):
        super().__init__(message)
        self.nu = nu


class DegenerateMeasurementError(CVQKDError, ArithmeticError):
    """The measured quadrature has non-positive variance."""


class NumericalConsistencyError(CVQKDError, ArithmeticError):
    """A quantity that must be non-negative came out negative beyond rounding."""


class BracketError(CVQKDError, ValueError):
    """A root or optimum is not contained in the supplied bracket."""


class EstimationError(CVQKDError, RuntimeError):
    """Parameter estimation produced a degenerate result."""
