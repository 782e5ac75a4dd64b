"""Exception hierarchy shared across the package."""


class SaemGpError(Exception):
    """Base class for all package errors."""


class DomainError(SaemGpError, ValueError):
    """Invalid input domain (bad box, bad dimensions, unknown enum value)."""


class ResourceError(SaemGpError):
    """A configured resource cap (grid size, memory) would be exceeded."""


class FitError(SaemGpError):
    """Emulator hyperparameter fit failed."""


class SolverError(SaemGpError):
    """ODE integration produced a non-finite or invalid state."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NumericalHealthError(SaemGpError):
    """A covariance went indefinite or a variance went negative beyond tolerance."""


class DivergenceError(SaemGpError):
    """SAEM iterate left the finite domain."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
