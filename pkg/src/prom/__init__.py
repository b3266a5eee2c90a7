"""Pseudo rotation matrices: rotation representations, orthogonalization maps and their gradients."""

from .errors import DegenerateInputError, DivergenceError, InvalidInputError, NumericalError

__version__ = "0.1.0"

__all__ = ["DegenerateInputError", "DivergenceError", "InvalidInputError", "NumericalError", "__version__"]
