"""Exception hierarchy shared by every selfonn1d module."""


class SelfOnnError(Exception):
    """Base class for all library errors."""


class DimensionError(SelfOnnError, ValueError):
    """Array shapes or lengths do not conform."""


class ParameterError(SelfOnnError, ValueError):
    """A scalar hyperparameter is out of its admissible range."""


class NumericError(SelfOnnError, ArithmeticError):
    """A non-finite value appeared where finite values are required.

    ``where`` carries structured diagnostics (layer, neuron, sample, beat id)
    so callers can report them without parsing the message.
    """

    def __init__(self, message, **where):
        super().__init__(message)
        self.where = where


class CacheStateError(SelfOnnError, RuntimeError):
    """A forward cache was missing, stale, or already consumed."""


class ConfigError(SelfOnnError, ValueError):
    """Invalid network, schedule, or run configuration."""


class ProtocolError(SelfOnnError, ValueError):
    """The data partitioning or training protocol cannot be satisfied."""


class DataError(SelfOnnError):
    """Input data files are missing or unusable."""


class ParseError(DataError, ValueError):
    """Malformed CSV content; ``line`` is the 1-based line number."""

    def __init__(self, message, path=None, line=None):
        loc = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(loc + message)
        self.path = path
        self.line = line


class ValidationError(DataError, ValueError):
    """Well-formed input that violates a semantic constraint."""


class MappingError(SelfOnnError, KeyError):
    """A beat annotation symbol has no AAMI class."""

    def __init__(self, symbol):
        super().__init__(f"unknown MIT-BIH beat symbol {symbol!r}")
        self.symbol = symbol

    def __str__(self):
        return self.args[0]
