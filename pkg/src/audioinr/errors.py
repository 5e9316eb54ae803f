"""Exception types raised across the package."""


class AudioINRError(Exception):
    """Base class for all package errors."""


class ShapeError(AudioINRError, ValueError):
    pass


class FormatError(AudioINRError, ValueError):
    """Malformed file contents (WAV header, checkpoint magic)."""


class UnsupportedFormatError(FormatError):
    pass


class CorruptionError(FormatError):
    """Checkpoint payload does not match its header."""


class ConfigError(AudioINRError, ValueError):
    pass


class NumericError(AudioINRError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UndefinedMetricError(NumericError):
    pass
