"""Exception types shared across the package."""


class DmtravError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(DmtravError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(DmtravError, ArithmeticError):
    """A computation produced a non-finite value or could not make progress."""


class FormatError(DmtravError, ValueError):
    """A file does not conform to its declared binary or text layout."""


class DegenerateDataError(DmtravError, ValueError):
    """Input data carries no usable signal (e.g. all points identical)."""


class NoMatchError(DmtravError, RuntimeError):
    """A parameter search failed to bracket or reach the requested target."""
