"""Exception types shared across modules (mapped to CLI exit codes)."""


class InputError(ValueError):
    """Malformed or out-of-contract input (CLI exit code 2)."""


class DomainError(InputError):
    """Evaluation outside the domain of a chart."""


class NumericError(ArithmeticError):
    """Numerical failure: singular metric, non-finite values, instability (exit code 3)."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point
