"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and numerical failures with 4.
"""


class SiomedError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidConfigError(SiomedError, ValueError):
    exit_code = 2


class SchemaError(SiomedError, ValueError):
    """Input table does not match the declared column roles."""

    exit_code = 3


class InsufficientDataError(SiomedError, ValueError):
    """Too few rows in a treatment arm or subgroup to fit a sieve."""

    exit_code = 3


class NumericalError(SiomedError, ArithmeticError):
    exit_code = 4


class SingularDesignError(NumericalError):
    """Gram matrix is singular even after the ridge and pseudo-inverse fallback."""


class ConvergenceError(NumericalError):
    """Optimizer did not reach the gradient tolerance from any start.

    The best iterate found is kept on ``best`` so callers can inspect it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class BootstrapUnstableError(NumericalError):
    pass
