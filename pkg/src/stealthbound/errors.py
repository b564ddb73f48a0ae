"""Exception hierarchy shared by all modules."""


class StealthBoundError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 3


class DimensionError(StealthBoundError, ValueError):
    exit_code = 1


class InvalidInputError(StealthBoundError, ValueError):
    exit_code = 1


class DomainError(StealthBoundError, ValueError):
    exit_code = 1


class InstabilityError(StealthBoundError):
    """A matrix that must be Schur stable is not."""


class ConvergenceError(StealthBoundError):
    """An iterative solver hit its iteration cap."""


class InfeasibleStealthinessError(StealthBoundError):
    """The requested detection level is below the false-alarm rate."""

    exit_code = 2


class InfeasibleCertificateError(StealthBoundError):
    """No certificate was found on the search grid."""

    exit_code = 2

    def __init__(self, message, best_margin=None):
        super().__init__(message)
        self.best_margin = best_margin


class ZeroMarginError(StealthBoundError):
    """The stochastic ellipsoid alone already violates a safety bound."""

    exit_code = 2


class DivergenceError(StealthBoundError):
    """A simulated trajectory blew up."""


class ConfigError(StealthBoundError):
    exit_code = 1
