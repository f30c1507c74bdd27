"""Exception types shared across the package.

The CLI maps each family to an exit code: configuration problems exit 2,
numeric failures exit 3, I/O and file-format problems exit 4.
"""


class HwRobustError(Exception):
    exit_code = 1


class ConfigError(HwRobustError, ValueError):
    exit_code = 2


class NumericError(HwRobustError, ArithmeticError):
    exit_code = 3


class UsageError(HwRobustError, RuntimeError):
    """API misuse, e.g. a stale gradient tape."""

    exit_code = 2


class FormatError(HwRobustError, OSError):
    """Malformed dataset or checkpoint file. Carries the byte offset when known."""

    exit_code = 4

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
