"""Exception types shared across the package.

Each carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table of its own.
"""


class LigoError(Exception):
    exit_code = 1


class ShapeError(LigoError, ValueError):
    exit_code = 2


class SizeError(LigoError, ValueError):
    exit_code = 2


class NumericError(LigoError, ArithmeticError):
    exit_code = 4


class SpecError(LigoError, ValueError):
    """A growth request whose source/target configs violate operator constraints."""

    exit_code = 2


class ConfigError(LigoError, ValueError):
    exit_code = 2


class DataError(LigoError, IOError):
    exit_code = 3


class DivergenceError(NumericError):
    """Raised by the trainer when the loss becomes non-finite.

    ``record`` holds the metrics row of the offending step.
    """

    exit_code = 4

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class CheckpointError(LigoError, IOError):
    exit_code = 3
