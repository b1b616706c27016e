"""Exception types raised by the library."""


class ShapingError(Exception):
    """Base class for all library errors."""


class PreconditionError(ShapingError, ValueError):
    """An input violates a documented precondition (shape, symmetry, sign)."""


class ShapeError(PreconditionError):
    """Matrix dimensions are inconsistent."""


class DegenerateProjectionError(ShapingError, ValueError):
    """The unitary projection of a rank-deficient matrix is not unique."""


class NoTransmissionError(ShapingError, ValueError):
    """Water-filling was asked to allocate power over all-zero gains."""


class NonFiniteObjectiveError(ShapingError, FloatingPointError):
    """The objective returned NaN or infinity during optimization."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class InfeasibleCompletionError(ShapingError, RuntimeError):
    """No permutation completion attains the requested singular-value bound."""


class ConditioningWarning(UserWarning):
    """A pseudo-inverse was taken of an ill-conditioned matrix."""
