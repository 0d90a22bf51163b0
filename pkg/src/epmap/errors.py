"""Exception hierarchy shared across the package."""


class EpmapError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(EpmapError):
    """Operands live on state spaces of different dimension."""


class SignalParseError(EpmapError, ValueError):
    """A polynomial or signal text form could not be parsed."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class ExactBackendUnavailable(EpmapError):
    """A symbolic operation was requested on a numeric-only object."""


class NumericFailure(EpmapError):
    """An integrator or solver produced a non-finite or divergent result."""


class MembershipError(EpmapError):
    """A control violates a kernel/domain membership precondition."""


class ConstructionError(EpmapError):
    """A perturbation-family construction has no solution within tolerance."""


class ValidationError(EpmapError):
    """A problem specification failed validation."""
