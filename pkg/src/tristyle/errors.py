"""Exception taxonomy shared across the package.

Validation failures raise :class:`InvalidInputError`, missing or
inconsistent runtime state raises :class:`StateError`, and diverging
numerics raise :class:`NumericalFailureError`.  The CLI maps these to
distinct exit codes.
"""


class TristyleError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(TristyleError, ValueError):
    """A caller-supplied value violates a documented precondition."""


class StateError(TristyleError, RuntimeError):
    """Required state (weights, cache entries, sessions) is missing or stale."""


class NumericalFailureError(TristyleError, ArithmeticError):
    """A numerical routine diverged (NaN loss, failed matrix square root)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class TransportError(TristyleError, ConnectionError):
    """An external captioner/LLM endpoint failed; carries retry metadata."""

    def __init__(self, message: str, retryable: bool = True, attempts: int = 1):
        super().__init__(message)
        self.retryable = retryable
        self.attempts = attempts


class DegenerateCaptionError(TristyleError, ValueError):
    """Style stripping removed every token; a manual caption is required."""


class UndefinedMetricError(TristyleError, ValueError):
    """The metric is undefined on the given inputs (e.g. all clusters singleton)."""


class QuotaError(StateError):
    """A curation selection would exceed the stage quota."""

    def __init__(self, message: str, current: int, quota: int):
        super().__init__(message)
        self.current = current
        self.quota = quota
