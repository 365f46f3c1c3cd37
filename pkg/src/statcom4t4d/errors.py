"""Exception hierarchy shared across the package."""


class StatcomError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(StatcomError):
    """Invalid configuration; ``path`` names the offending key (dotted)."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DivergenceError(StatcomError):
    """Non-finite plant state. ``snapshot`` holds the last finite values."""

    def __init__(self, message, snapshot=None):
        self.snapshot = snapshot or {}
        super().__init__(message)


class WindowError(StatcomError):
    """Analysis window does not span an integer number of cycles."""


class ChannelNotFoundError(StatcomError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class RecordParseError(StatcomError):
    """Malformed record CSV; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
