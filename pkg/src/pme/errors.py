"""Exception hierarchy shared by the library and the command line."""


class PMEError(Exception):
    """Base class for every error raised by :mod:`pme`."""

    exit_code = 1


class ValidationError(PMEError, ValueError):
    """Inputs are inconsistent, malformed or violate a precondition."""

    exit_code = 2


class NumericalError(PMEError, ArithmeticError):
    """A computation produced a degenerate or non-finite result."""

    exit_code = 3
