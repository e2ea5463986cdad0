"""Exception types raised across the package.

Each CLI-facing error carries the process exit code the command line maps
it to (1 usage, 2 data, 3 numerical divergence).
"""


class PrecoderError(Exception):
    exit_code = 1


class ConfigError(PrecoderError, ValueError):
    exit_code = 1


class DimensionError(PrecoderError, ValueError):
    exit_code = 1


class SingularChannelError(PrecoderError, ArithmeticError):
    """H H^H is numerically rank deficient."""

    exit_code = 2


class ZeroPowerError(PrecoderError, ZeroDivisionError):
    exit_code = 2


class ConvergenceError(PrecoderError, ArithmeticError):
    exit_code = 3


class DivergenceError(PrecoderError, FloatingPointError):
    """Non-finite values appeared in an iterate.

    ``where`` names the iteration, layer, or epoch/batch coordinate.
    """

    exit_code = 3

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class TapeMismatchError(PrecoderError, ValueError):
    exit_code = 1


class DataFormatError(PrecoderError, ValueError):
    exit_code = 2
