"""Exception hierarchy shared across the library.

The command-line layer maps these onto process exit codes: configuration
problems exit 2, data problems exit 3, numerical failures exit 4.
"""

from __future__ import annotations


class ParameterError(ValueError):
    """An argument or hyperparameter is outside its allowed domain."""


class ConfigError(Exception):
    """A run configuration is malformed or internally inconsistent."""


class DataError(Exception):
    """Input data is malformed, inconsistent, or insufficient."""


class NumericalError(Exception):
    """A numerical routine failed in a way retries cannot fix."""


class SingularMatrixError(NumericalError):
    """Cholesky factorization failed.

    Attributes
    ----------
    minor : int
        1-based index of the leading minor that is not positive
        definite, as reported by the factorization routine.
    element : int or None
        For stacked factorizations, the index of the failing matrix
        within the stack.
    """

    def __init__(self, message: str, minor: int = 0, element: int | None = None):
        super().__init__(message)
        self.minor = minor
        self.element = element
