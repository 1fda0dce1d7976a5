"""Exception types raised across the package."""


class StableVelocityError(Exception):
    """Base class for all package errors."""


class ScheduleRangeError(StableVelocityError, ValueError):
    """Time outside the clamped interval of a schedule."""

    def __init__(self, t, t_min, t_max):
        self.t = t
        self.t_min = t_min
        self.t_max = t_max
        super().__init__(f"time {t!r} outside [t_min={t_min}, t_max={t_max}]")


class ShapeError(StableVelocityError, ValueError):
    pass


class SingularityError(StableVelocityError, ArithmeticError):
    """A coefficient denominator vanished at the requested time."""

    def __init__(self, what, t):
        self.t = t
        super().__init__(f"{what} is degenerate at t={t!r}")


class TimeOrderError(StableVelocityError, ValueError):
    def __init__(self, t, tau):
        self.t = t
        self.tau = tau
        super().__init__(f"reverse step requires tau < t, got t={t!r}, tau={tau!r}")


class InsufficientDataError(StableVelocityError, ValueError):
    def __init__(self, label, have, need):
        self.label = label
        super().__init__(f"class {label} has {have} points, bank prefill needs {need}")


class NotPrefilledError(StableVelocityError, RuntimeError):
    pass


class LabelError(StableVelocityError, ValueError):
    pass


class ConfigError(StableVelocityError, ValueError):
    pass


class DataError(StableVelocityError, ValueError):
    """Non-finite values found in training data or targets."""


class NumericError(StableVelocityError, FloatingPointError):
    """A run produced NaN/inf (maps to CLI exit code 2)."""
