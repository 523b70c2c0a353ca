"""
Exception types raised by the package.
"""


class AqptError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(AqptError, ValueError):
    """
    A precondition, range or format check failed. The CLI maps this error to
    exit code 1.
    """


class NotAWaveplateError(ValidationError):
    """The best wave-plate fit leaves a residual above the acceptance bound."""


class DegenerateEnsembleError(AqptError, RuntimeError):
    """
    Every particle of the ensemble has zero likelihood for the data seen so
    far. ``details`` carries a diagnostic dump of the ensemble state.
    """

    def __init__(self, message: str, details: dict = None):
        super().__init__(message)
        self.details = details or {}
