"""Exception hierarchy shared by all modules."""


class BetaGEError(Exception):
    """Base class for errors raised by betage."""


class ValidationError(BetaGEError, ValueError):
    """Invalid input: bad shapes, out-of-range values, inconsistent data."""


class ParseError(ValidationError):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class NumericError(BetaGEError, ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message, **diagnostics):
        self.diagnostics = diagnostics
        super().__init__(message)


class OptimizationError(NumericError):
    """An optimizer could not make progress."""
