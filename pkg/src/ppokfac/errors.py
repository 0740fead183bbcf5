"""Exception types raised across the package."""


class PPOKFACError(Exception):
    pass


class NotPositiveDefinite(PPOKFACError, ValueError):
    """Cholesky failed; the damping is too small for the factor."""


class DimensionMismatch(PPOKFACError, ValueError):
    pass


# backprop and factor code report the same failure under this name
ShapeMismatch = DimensionMismatch


class NonFiniteOutput(PPOKFACError, FloatingPointError):
    """A forward pass produced NaN/Inf, usually from diverged parameters."""


class NonFiniteState(PPOKFACError, FloatingPointError):
    pass


class NonFiniteUpdate(PPOKFACError, FloatingPointError):
    pass


class NoConvergence(PPOKFACError, RuntimeError):
    pass


class ConfigError(PPOKFACError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingMetrics(PPOKFACError, FileNotFoundError):
    pass


class TrainingError(PPOKFACError, RuntimeError):
    """Wraps a failure inside train() with the iteration it happened in."""

    def __init__(self, iteration, cause):
        super().__init__(f"iteration {iteration}: {type(cause).__name__}: {cause}")
        self.iteration = iteration
        self.cause = cause
