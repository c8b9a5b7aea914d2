"""Exception types raised across the package."""


class SodacerError(Exception):
    """Base class for all package errors."""


class NonFiniteState(SodacerError, ArithmeticError):
    pass


class NonFiniteUpdate(SodacerError, ArithmeticError):
    pass


class SaturationBoundary(SodacerError, ValueError):
    """A control lies outside the open saturation interval (-kappa, kappa)."""


class ClusterCapacityExceeded(SodacerError, RuntimeError):
    pass


class EmptyReplay(SodacerError, LookupError):
    pass


class ConfigError(SodacerError, ValueError):
    pass


class StepFailure(SodacerError, RuntimeError):
    """Wraps an error raised during an outer training step."""

    def __init__(self, step, t, cause):
        super().__init__(f"outer step {step} (t={t:.4f}): {type(cause).__name__}: {cause}")
        self.step = step
        self.t = t
        self.cause = cause


class DegenerateInput(UserWarning):
    """Issued when a Friedman row is fully tied."""
