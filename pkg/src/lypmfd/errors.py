"""Exception hierarchy shared by the library and the CLI."""


class LypmfdError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LypmfdError, ValueError):
    """An array does not match the dimensions declared by the system."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ParseError(LypmfdError, ValueError):
    """Malformed expression source. Carries a 1-based line and column."""

    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class EvaluationError(LypmfdError, ArithmeticError):
    """An expression could not be evaluated (division by zero, bad power...)."""


class NonDifferentiableError(LypmfdError):
    """A nonlinearity has no derivative at the requested point."""


class TrichotomyError(LypmfdError):
    """The proposed exponential rates do not bound the linear flow."""


class ConditionError(LypmfdError):
    """A hypothesis required by the fixed-point construction is violated."""


class TailError(LypmfdError):
    """Truncating the improper integrals at the grid edge is too lossy."""


class ConvergenceError(LypmfdError):
    """The fixed-point iteration failed to converge or contracted too slowly."""


class IntegrationError(LypmfdError):
    """The reference integrator produced a non-finite state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConfigError(LypmfdError, ValueError):
    """A configuration document is invalid. ``path`` locates the offending key."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
