"""Exception types raised across the package."""


class FracFKError(Exception):
    """Base class for all package errors."""


class InvalidParams(FracFKError, ValueError):
    """Model parameters violate an admissibility constraint."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DomainError(FracFKError, ValueError):
    """An argument lies outside the domain of a function."""


class GridMismatch(FracFKError, ValueError):
    """A time is not a grid node, or two grids are incompatible."""


class SingularPoint(FracFKError, ArithmeticError):
    """Evaluation requested on the singular locus of a kernel."""


class FactorizationError(FracFKError, ArithmeticError):
    """A covariance matrix could not be factorized even after jitter."""


class OutOfDomain(FracFKError, ValueError):
    """A path left the spatial grid of a sampled field."""


class StabilityError(FracFKError, ValueError):
    """Grid steps violate the stability condition of a time-stepping scheme."""


class DegenerateSeries(FracFKError, ValueError):
    """A structure series cannot be fitted on a log scale."""
