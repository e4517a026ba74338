"""Exception types shared across the package."""


class MaresuError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(MaresuError, ValueError):
    """Operand shapes do not conform."""


class ParameterError(MaresuError, ValueError):
    """An argument is outside its valid domain."""


class DataError(MaresuError, ValueError):
    """Input data violates a content constraint (e.g. label out of range)."""


class DegenerateError(MaresuError, ValueError):
    """A statistic is undefined for the given input."""


class StateError(MaresuError, RuntimeError):
    """An operation was called in the wrong order."""


class FormatError(MaresuError, ValueError):
    """A file does not follow the expected binary layout."""


class VersionError(FormatError):
    """A file was written by an incompatible format version."""


class CorruptionError(FormatError):
    """A file is truncated or its checksum does not match."""
