"""Exception types raised by the engine."""


class ModelError(ValueError):
    """Invalid model coefficients or simulation inputs."""


class AdmissibilityError(ValueError):
    """A strategy violates the jump constraint where a default lands."""

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class RegressionError(ArithmeticError):
    """A least-squares projection could not be carried out reliably."""

    def __init__(self, message, step=None, condition=None):
        super().__init__(message)
        self.step = step
        self.condition = condition


class DivergenceError(ArithmeticError):
    """Backward iterates left the declared bound envelope."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class OptimizerError(ValueError):
    """Pointwise optimizer received an empty feasible set or NaN input."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
