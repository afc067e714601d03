"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class DomainError(ValueError):
    """Raised when a quantity is undefined for the given input (e.g. log of zero)."""


class ConvergenceError(RuntimeError):
    """The iterative solver hit its iteration cap before certifying optimality."""

    def __init__(self, message, best_residual, iterations):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations


class InfeasibleGuardrailsError(ValidationError):
    """The envy budget produces a shrink factor outside (0, 1)."""

    def __init__(self, message, c, side):
        super().__init__(message)
        self.c = c
        self.side = side
