class InvalidInputError(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class NumericalFailureError(ArithmeticError):
    """Raised when a numerical step (factorization, solve) breaks down."""


class DivergenceError(RuntimeError):
    """Raised when the fixed-point iteration is detected to diverge.

    The diagnostics collected up to the point of failure are attached as
    ``self.diagnostics``.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics
