"""Exception hierarchy shared across the package."""

from __future__ import annotations


class DipstopError(Exception):
    """Base class for all package-specific errors."""


class DomainError(DipstopError, ValueError):
    """A numeric argument is outside its valid domain."""


class ShapeError(DipstopError, ValueError):
    """Array arguments have incompatible or invalid shapes."""


class SizeError(DipstopError, ValueError):
    """An image is too small for the requested operation."""


class ConfigError(DipstopError, ValueError):
    """A run or architecture configuration is invalid."""


class CapabilityError(DipstopError, RuntimeError):
    """The requested computation is unsupported in this configuration."""


class IOFailureError(DipstopError, OSError):
    """Reading or writing an external file failed."""


class NonFiniteLossError(DipstopError, ArithmeticError):
    """Optimization produced a non-finite loss.

    Carries the partial trace recorded up to the last finite iteration so
    callers can inspect what happened before the abort.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
