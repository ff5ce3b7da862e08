"""Exception types shared across the package."""


class ZeroMassError(ValueError):
    """Raised when an operation needs positive mass on a set that has none."""


class ScheduleError(ValueError):
    """Raised when a delta schedule or n-window violates a precondition."""


class EnumerationCapError(ValueError):
    """Raised when an exhaustive enumeration would exceed its configured cap."""


class CycleError(RuntimeError):
    """Raised when a fixed-point iteration enters a cycle without a fixed point."""


class InvariantViolation(ArithmeticError):
    """Raised when a numerical identity that must hold is violated."""
