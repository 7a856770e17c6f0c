"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when user-supplied data violates a documented precondition."""


class SolverError(RuntimeError):
    """Raised when the trajectory optimizer cannot continue (diagnostics in args)."""
