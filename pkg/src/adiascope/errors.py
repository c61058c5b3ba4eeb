"""Exception types raised by adiascope."""


class AdiascopeError(Exception):
    """Base class for all library errors."""


class DimensionError(AdiascopeError, ValueError):
    pass


class InvariantError(AdiascopeError, ValueError):
    """A matrix or data object violates a documented invariant."""


class ConvergenceError(AdiascopeError):
    """An iterative method stopped before reaching its tolerance.

    ``residual`` carries the last measured residual.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class LabelTrackingError(AdiascopeError):
    """Eigenvector labels could not be continued between two frames."""

    def __init__(self, message, overlap=None):
        super().__init__(message)
        self.overlap = overlap


class GeometricConditionError(AdiascopeError):
    """The same-group dynamic phases do not cancel modulo 2*pi."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class ToleranceError(AdiascopeError):
    """Two estimates of the same quantity disagree beyond tolerance."""

    def __init__(self, message, coarse=None, fine=None, difference=None):
        super().__init__(message)
        self.coarse = coarse
        self.fine = fine
        self.difference = difference
