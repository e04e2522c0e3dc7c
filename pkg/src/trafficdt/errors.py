"""Exception types shared by every stage of the pipeline."""


class InputError(ValueError):
    """Raised when caller-supplied data violates a precondition."""


class NumericalError(ArithmeticError):
    """Raised when a computation produces non-finite or unfactorizable values."""
