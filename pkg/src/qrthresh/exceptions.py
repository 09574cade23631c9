"""Exception types raised across the package."""


class QRThreshError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QRThreshError, ValueError):
    """Inconsistent dimensions, unknown options or malformed config files."""


class DomainError(QRThreshError, ValueError):
    """An input lies outside the domain an operation is defined on."""


class EstimationError(QRThreshError, RuntimeError):
    """Model fitting failed (separation, non-convergence).

    Parameters
    ----------
    message : str
    diagnostics : dict, optional
        Iteration history or other state useful for debugging the fit.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
