"""Exception hierarchy.

Every error carries a machine-readable ``category`` and the process exit code
the CLI uses for it.
"""


class EasdError(Exception):
    category = "error"
    exit_code = 1


class ConfigError(EasdError, ValueError):
    category = "config"
    exit_code = 2


class FormatError(EasdError, ValueError):
    """A file could not be parsed or is internally inconsistent."""

    category = "io"
    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(EasdError, ArithmeticError):
    category = "numerical"
    exit_code = 4


class ShapeError(EasdError, ValueError):
    category = "shape"
    exit_code = 5


class WindowTooShortError(ShapeError):
    pass


class DataError(EasdError, ValueError):
    category = "data"
    exit_code = 5
