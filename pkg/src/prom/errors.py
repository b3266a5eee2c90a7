"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition (non-unit axis, non-rotation, ...)."""


class DegenerateInputError(ValueError):
    """A normalization or projection collapsed to (near) zero length.

    ``stage`` names the vector that collapsed, e.g. ``"q2"`` or ``"r2''"``.
    """

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class NumericalError(ArithmeticError):
    """An iterative routine failed to converge inside its iteration budget."""


class DivergenceError(FloatingPointError):
    """NaN or Inf reached the parameters or their gradient."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
