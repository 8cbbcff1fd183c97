"""Exception types shared across the aidlab package."""


class AidLabError(Exception):
    """Base class for all aidlab errors."""


class DomainViolation(AidLabError):
    """An evaluation point is outside the declared domain of a basis function."""


class DimensionMismatch(AidLabError):
    """Vector/matrix dimensions are inconsistent with the declared stacks."""


class IndexOutOfRange(AidLabError):
    """A player or coordinate index is out of range."""


class NonConvergence(AidLabError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, last_point=None, residual=None):
        super().__init__(message)
        self.last_point = last_point
        self.residual = residual


class DivergedFromBox(AidLabError):
    """Equilibrium iterates escaped the declared domain box."""


class InfeasibleSet(AidLabError):
    """Projection onto an (apparently) empty constraint intersection."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class HypothesisViolated(AidLabError):
    """A verification helper was called with its hypothesis not satisfied."""


class RankDeficient(AidLabError):
    """A design system lost rank and is inconsistent at this point."""


class InfeasibleMargin(AidLabError):
    """The per-player second-order margin cannot be met by any incentive."""


class InfeasibleStability(AidLabError):
    """The joint stability constraint cannot be met by penalty escalation."""


class SingularJacobian(AidLabError):
    """The game Jacobian is singular where invertibility is required."""


class NoInteriorMaximum(AidLabError):
    """Scalar maximization ended on the search boundary."""


class ConfigError(AidLabError):
    """An experiment configuration failed validation."""


class UnknownParameter(AidLabError):
    """A sweep or override referenced a parameter that does not exist."""


class UnsupportedDimension(AidLabError):
    """An operation restricted to two-player games got something else."""
