"""Exception hierarchy shared across the package.

The CLI maps ``InvalidInputError`` to exit code 2 and
``NumericFailureError`` to exit code 3.
"""


class TarmaError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TarmaError):
    """Bad configuration, malformed data, or violated preconditions."""


class NumericFailureError(TarmaError):
    """Numerical breakdown: divergence, singular systems, degenerate scale."""
