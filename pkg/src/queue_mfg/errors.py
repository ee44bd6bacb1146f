"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Bad model name, bad scenario key, or a grid that violates the CFL bound."""


class ValidationError(ValueError):
    """A parameter has the wrong sign or lies outside its admissible range."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite or inadmissible value."""

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} at {location}"
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """The fixed-point loop ran out of iterations."""

    def __init__(self, message, history):
        self.history = list(history)
        super().__init__(f"{message}; residual history: {self.history}")
