"""Exception hierarchy shared by every module."""


class NoisyKDError(Exception):
    """Base class for all package errors."""


class InvalidInputError(NoisyKDError, ValueError):
    pass


class InvalidConfigError(NoisyKDError, ValueError):
    pass


class ParseError(InvalidInputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(InvalidInputError):
    pass


class TrainingDivergenceError(NoisyKDError, RuntimeError):
    pass


class DegenerateLabelsError(NoisyKDError, ValueError):
    """Discriminator targets contain too few samples of one class."""


class NotFittedError(NoisyKDError, RuntimeError):
    pass


class StageError(NoisyKDError):
    """Wraps an error raised by one stage of an experiment pipeline."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
