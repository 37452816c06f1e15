"""Exception types shared across the package."""


class RareTailError(Exception):
    """Base class for all raretail errors."""


class ValidationError(RareTailError):
    """Invalid configuration or malformed input."""


class InvalidTokenError(ValidationError):
    """A token id falls outside the model's vocabulary."""


class DegenerateTextError(RareTailError):
    """Text has no countable words, so readability is undefined."""


class UnknownObservableError(ValidationError):
    """Observable id is not registered."""


class ProtocolError(RareTailError):
    """External model endpoint returned a malformed or non-normalized payload."""


class NetworkError(RareTailError):
    """External model endpoint unreachable after bounded retries."""


class ConvergenceError(RareTailError):
    """Self-consistent solve did not converge within the iteration budget."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class EnumerationBudgetError(RareTailError):
    """Exact enumeration would exceed the outcome cap."""


class EstimationError(RareTailError):
    """Estimate cannot be produced from the available samples."""


class ConditioningWarning(UserWarning):
    """Sample set looks poorly connected; estimates may be unreliable."""
