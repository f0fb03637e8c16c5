"""Exception hierarchy. Each class maps to a distinct CLI exit code."""


class GaugeError(Exception):
    exit_code = 1


class FormatError(GaugeError, ValueError):
    """A file does not follow its binary layout."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncatedError(FormatError):
    exit_code = 4


class InvalidParameterError(GaugeError, ValueError):
    exit_code = 2


class AliasingError(GaugeError):
    """The glyph renders ambiguously at two or more grid angles."""

    exit_code = 5


class TrainingDivergedError(GaugeError, FloatingPointError):
    exit_code = 6

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UnreachableTargetError(GaugeError):
    exit_code = 7


class StageError(GaugeError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
