"""Exceptions raised by prefect-rbf-fmm."""

from typing import Optional

from prefect.exceptions import PrefectException


class RbfFmmError(PrefectException):
    """
    Base class for every error raised by this collection.
    """


class KernelDomainError(RbfFmmError, ValueError):
    """
    Raised when a kernel or its transform is evaluated outside its domain,
    e.g. a generalized Fourier transform at the origin.
    """


class UnsupportedKernelError(RbfFmmError, ValueError):
    """
    Raised when an operation is not available for a kernel, e.g. a closed-form
    transform for a Wendland function.
    """


class AccuracyError(RbfFmmError):
    """
    Raised when a quadrature does not reach the requested tolerance.

    Attributes:
        estimate: The error estimate that was achieved.
    """

    def __init__(self, message: str, estimate: Optional[float] = None):
        super().__init__(message)
        self.estimate = estimate


class ZeroSeparationError(RbfFmmError, ValueError):
    """
    Raised when a point set contains duplicate points.
    """


class TreeTooDeepError(RbfFmmError, ValueError):
    """
    Raised when a box tree would exceed the configured box cap or is too
    shallow for the requested method.
    """


class ConfigurationError(RbfFmmError, ValueError):
    """
    Raised when inputs are individually valid but incompatible with each other.
    """


class NonConvergenceError(RbfFmmError):
    """
    Raised when a Krylov iteration stops before reaching its tolerance.

    Attributes:
        residual: Best relative residual reached.
        iterations: Number of iterations performed.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularMatrixError(RbfFmmError):
    """
    Raised when a collocation matrix cannot be factorized.

    Attributes:
        condition: Estimated condition number of the matrix.
    """

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class MemoryCapError(RbfFmmError):
    """
    Raised when a dense assembly would exceed its size cap.
    """
