"""Exception hierarchy.

Input-side problems (shapes, configs, files) derive from :class:`InputError`;
the CLI maps them to exit code 1. Numerical failures map to exit code 2.
"""


class ViewClustError(Exception):
    """Base class for every error raised by this package."""


class InputError(ViewClustError, ValueError):
    """Invalid user-supplied data."""


class ShapeError(InputError):
    pass


class ConfigError(InputError):
    pass


class StateError(ViewClustError, RuntimeError):
    """An operation was requested on a clustering state that cannot support it."""


class NumericalError(ViewClustError, ArithmeticError):
    pass


class EmptyClusteringError(NumericalError):
    """Pruning removed every cluster.

    ``fallback`` holds the unpruned k=2 result so callers can recover.
    """

    def __init__(self, message, fallback=None):
        super().__init__(message)
        self.fallback = fallback


class FormatError(InputError):
    """Malformed binary file. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    def __init__(self, message, offset, expected, actual):
        super().__init__(f"{message}: expected {expected} bytes, got {actual}", offset)
        self.expected = expected
        self.actual = actual
