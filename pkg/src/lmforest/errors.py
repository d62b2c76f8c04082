"""Exception types shared across the package."""


class LmForestError(Exception):
    """Base class for package errors."""


class InvalidInputError(LmForestError):
    """Raised when inputs violate a documented precondition."""
