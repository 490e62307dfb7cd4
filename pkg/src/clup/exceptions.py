"""Exception hierarchy shared by the detector, the theory solvers and the harness."""


class ClupError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDimension(ClupError, ValueError):
    pass


class InvalidConfig(ClupError, ValueError):
    pass


class DomainError(ClupError, ValueError):
    """An argument lies outside the domain of a closed-form expression."""


class InfeasibleRadius(ClupError):
    """The ball radius is below the smallest residual reachable over the box."""

    def __init__(self, radius, rho_min, partial=None):
        self.radius = radius
        self.rho_min = rho_min
        self.partial = partial
        super().__init__(f"radius {radius:.6g} is below the minimal residual {rho_min:.6g}")


class NoConvergence(ClupError):
    def __init__(self, message, iterations=None, partial=None):
        self.iterations = iterations
        self.partial = partial
        super().__init__(message)


class RadiusUnreachable(ClupError):
    pass


class SaddleNotConverged(ClupError):
    pass


class QuadratureUnderResolved(ClupError):
    pass


class ConstraintViolation(ClupError):
    pass


class CovarianceNotPSD(ClupError):
    pass


class LevelSetMiss(ClupError):
    pass


class InsufficientRuns(ClupError):
    pass


class KeyMismatch(ClupError):
    pass
