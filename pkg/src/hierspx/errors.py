"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An operation received data violating its preconditions."""


class InvalidConfigError(ValueError):
    """A configuration object holds an out-of-range value."""


class ResourceLimitError(RuntimeError):
    """An operation would materialize more memory than its guard allows."""


class ParseError(ValueError):
    """A file does not conform to its declared format.

    ``byte_offset`` or ``line`` locate the problem when known.
    """

    def __init__(self, message, byte_offset=None, line=None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.byte_offset = byte_offset
        self.line = line


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, iteration, message=None):
        super().__init__(message or f"training loss became non-finite at iteration {iteration}")
        self.iteration = iteration


class NumericalError(RuntimeError):
    """A numerical check hit a non-finite evaluation."""
