"""Exception hierarchy shared across the package."""


class PhotonLabError(Exception):
    """Base class for all package errors."""


class ConfigError(PhotonLabError, ValueError):
    """Invalid or inconsistent configuration."""


class OutOfRangeError(PhotonLabError, ValueError):
    pass


class InfeasibleError(PhotonLabError, ValueError):
    pass


class PreconditionError(PhotonLabError, ValueError):
    pass


class LineageError(PhotonLabError, ValueError):
    """Datasets that were not produced from the same configuration lineage."""


class FitError(PhotonLabError, RuntimeError):
    """Least-squares fit did not converge. Carries the last residual vector."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class AmbiguityError(PhotonLabError, ValueError):
    pass


class UnknownFigureError(PhotonLabError, ValueError):
    pass
