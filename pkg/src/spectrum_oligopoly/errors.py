"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class CapExceededError(ValidationError):
    """Raised when an exhaustive computation is asked to run past its size cap."""


class UndefinedStateError(ValidationError):
    """Raised when a pricing distribution is requested for a state that is never offered."""
