"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
anything else -> 3.
"""


class PPGNNError(Exception):
    """Base class for all package errors."""


class ConfigError(PPGNNError, ValueError):
    """Invalid configuration or parameter combination."""


class DataError(PPGNNError):
    """Malformed, missing or inconsistent on-disk data."""


class ParseError(DataError):
    """An input text file could not be parsed."""

    def __init__(self, path, lineno, msg):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {msg}")


class StoreValidationError(DataError):
    """A chunk store failed header validation."""


class BadMagicError(StoreValidationError):
    pass


class BadVersionError(StoreValidationError):
    pass


class SizeMismatchError(StoreValidationError):
    pass
