"""Exception types raised across the package."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, estimate=None, abs_err=None):
        super().__init__(message)
        self.estimate = estimate
        self.abs_err = abs_err


class NonFiniteError(FloatingPointError):
    """A model, loss or gradient picked up NaN/Inf."""


class ConfigError(ValueError):
    """Invalid experiment configuration. ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class ConditionsViolated(ValueError):
    """Stepsize conditions required by the convergence bound do not hold."""


class InsufficientReplicates(ValueError):
    pass
