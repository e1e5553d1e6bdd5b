"""Exception hierarchy shared across the package."""


class AccrueError(Exception):
    """Base class for all errors raised by accrue."""


class ValidationError(AccrueError, ValueError):
    """Input data or configuration violates a documented constraint."""


class ParseError(ValidationError):
    """A CSV/JSON input could not be parsed.

    ``line`` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientDataError(AccrueError, ValueError):
    pass


class DegenerateDataError(AccrueError, ValueError):
    pass


class DomainError(AccrueError, ValueError):
    """A parameter lies outside the domain of a function."""


class NumericOverflowError(AccrueError, ArithmeticError):
    pass


class FitFailureError(AccrueError, RuntimeError):
    pass


class SamplerFailureError(AccrueError, RuntimeError):
    pass
