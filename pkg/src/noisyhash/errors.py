"""Exception hierarchy. Each top-level class maps to a CLI exit code."""


class NoisyHashError(Exception):
    exit_code = 1


class ConfigError(NoisyHashError):
    """Invalid configuration, shapes or hyperparameters."""

    exit_code = 2


class UsageError(ConfigError):
    """API misuse, e.g. a backward cache that does not belong to the net."""


class DataError(NoisyHashError):
    exit_code = 3


class FormatError(DataError):
    """Malformed feature file. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(NoisyHashError):
    exit_code = 4
