"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the domain a routine supports."""


class ConvergenceError(ArithmeticError):
    """A series did not reach its tolerance within the term cap."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to meet its error target."""


class InsufficientGridError(ValueError):
    pass


class StateError(RuntimeError):
    """Backward pass requested without a matching forward pass."""


class TrainingDivergedError(ArithmeticError):
    pass
