"""Exception hierarchy shared by the solvers."""


class RbsdeLabError(Exception):
    """Base class for all library errors."""


class InvalidInstanceError(RbsdeLabError, ValueError):
    """Problem data that cannot be turned into a solvable instance."""


class DomainError(RbsdeLabError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class ContractionError(RbsdeLabError, ValueError):
    """The implicit generator step is not a contraction (dt * C >= 1)."""


class NumericalFailure(RbsdeLabError, RuntimeError):
    """An iterative step failed to converge.

    Attributes
    ----------
    residual : float
        Worst fixed-point residual observed when the iteration gave up.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual
