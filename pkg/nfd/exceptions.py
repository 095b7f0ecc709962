"""Custom exceptions for nearfield-distortion."""

from typing import Optional


class NfdError(Exception):
    """Base exception for nearfield-distortion."""
    pass


class ConfigurationError(NfdError):
    """Raised when a scenario or configuration value is invalid.

    ``path`` is the dotted location of the offending field, e.g. ``geometry.m_y``.
    """

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class NumericalError(NfdError):
    """Raised when a numerical computation cannot produce a valid result."""
    pass


class DomainError(NumericalError, ValueError):
    """Raised when an argument lies outside the domain of an operation."""
    pass


class IllConditionedError(NumericalError):
    """Raised when a matrix inversion is numerically unsafe."""

    def __init__(self, message: str, condition_number: float):
        self.condition_number = condition_number
        super().__init__(f"{message} (condition number {condition_number:.3e})")


class ConvergenceError(NumericalError):
    """Raised when an iterative solver cannot reach its target."""
    pass


class EnsembleError(NumericalError):
    """Raised when a Monte-Carlo ensemble is too small for an estimate."""
    pass


class ValidationMismatchError(NfdError):
    """Raised when simulated peaks disagree with focal-point predictions."""
    pass
