"""Exception hierarchy.

Configuration and input problems derive from ``ValueError``; failures of a
numerical procedure derive from ``NumericError`` so the CLI can map them to
distinct exit codes.
"""


class InvalidParameterError(ValueError):
    pass


class ValidationError(ValueError):
    """Input data failed validation; ``problems`` lists each offending entry."""

    def __init__(self, message, problems=()):
        self.problems = list(problems)
        if self.problems:
            message = message + ": " + "; ".join(self.problems)
        super().__init__(message)


class ConfigError(ValidationError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class NumericError(RuntimeError):
    pass


class StepSizeError(NumericError):
    pass


class FrameContinuityError(NumericError):
    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message)


class ConvergenceError(NumericError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class InsufficientDataError(ValueError):
    pass
