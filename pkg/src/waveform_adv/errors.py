"""Exception hierarchy.  The CLI maps each family onto an exit code."""


class WaveformAdvError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class SchemaError(WaveformAdvError, ValueError):
    """A file, artifact or config does not match its documented layout."""

    exit_code = 4


class FormatVersionError(SchemaError):
    pass


class NumericalError(WaveformAdvError, ArithmeticError):
    """A computation produced NaN/Inf or failed to make progress."""

    exit_code = 5


class SolverDivergence(NumericalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
