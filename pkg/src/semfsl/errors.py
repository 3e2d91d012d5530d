"""Exception hierarchy shared by every module."""


class SemFSLError(Exception):
    """Base class for library errors."""


class DimensionError(SemFSLError, ValueError):
    pass


class ConfigurationError(SemFSLError, ValueError):
    pass


class UsageError(SemFSLError, ValueError):
    pass


class ValidationError(SemFSLError, ValueError):
    pass


class FormatError(SemFSLError):
    """A file does not follow the expected layout."""


class CorruptionError(FormatError):
    """A file is truncated or has trailing garbage."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class ParseError(FormatError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class MissingEmbeddingError(SemFSLError, KeyError):
    def __init__(self, token, class_name=None):
        msg = f"no embedding for token {token!r}"
        if class_name is not None and class_name != token:
            msg += f" (class {class_name!r})"
        super().__init__(msg)
        self.token = token
        self.class_name = class_name

    def __str__(self):
        return self.args[0]


class LabelIndexError(SemFSLError, IndexError):
    pass


class GradientCheckError(SemFSLError, AssertionError):
    pass


class TrainingDivergedError(SemFSLError, FloatingPointError):
    pass
