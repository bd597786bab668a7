"""Exception hierarchy for bilinspa."""


class BilinspaError(Exception):
    """Base class for all package errors."""


class DimensionError(BilinspaError, ValueError):
    """Matrix shapes are inconsistent with each other."""


class PreconditionError(BilinspaError, ValueError):
    """An argument violates the documented contract of a routine."""


class InstabilityError(BilinspaError):
    """The system is not mean-square stable where stability is required."""


class DimensionCapError(BilinspaError):
    """State dimension exceeds the dense Kronecker solver cap."""


class SolverError(BilinspaError):
    """A linear or nonlinear matrix equation solve failed."""


class ConvergenceError(SolverError):
    """An iteration did not reach its tolerance.

    The best iterate and its residual are attached so callers can inspect
    them.
    """

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class NotPositiveDefiniteError(BilinspaError):
    """A matrix required to be positive definite is not."""


class InadmissibleOrderError(BilinspaError, ValueError):
    """A reduction order splits a group of repeated Hankel singular values."""

    def __init__(self, message, cuts=()):
        super().__init__(message)
        self.cuts = tuple(cuts)


class SingularBlockError(BilinspaError):
    """A block that must be inverted is singular or too ill-conditioned."""


class SimulationError(BilinspaError):
    """A trajectory left the finite range during integration."""


class ManifestError(BilinspaError):
    """A manifest or matrix file could not be read."""
