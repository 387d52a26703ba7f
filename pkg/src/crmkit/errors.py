"""Exception types shared across the engine."""


class CrmError(Exception):
    """Base class for all errors raised by this package."""


class DoseIndexError(CrmError):
    """A dose index fell outside 1..k for the active skeleton."""


class ParameterDomainError(CrmError):
    """A model parameter fell outside the admissible domain."""


class HistoryError(CrmError):
    """A trial history failed validation or lacks required fields."""


class NoInteriorMaximumError(CrmError):
    """The likelihood has no interior maximum (homogeneous responses)."""


class QuadratureError(CrmError):
    """Adaptive quadrature failed to converge within the panel budget."""


class FeasibilityError(CrmError):
    """A partition feasibility restriction failed for a named dose."""


class ConfigError(CrmError):
    """A design configuration document failed schema validation."""

    def __init__(self, message: str, field_errors: list[str] | None = None):
        super().__init__(message)
        self.field_errors = field_errors or []


class SessionError(CrmError):
    """A session operation violated the session protocol."""
