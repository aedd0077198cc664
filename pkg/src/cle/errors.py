"""Exception hierarchy shared across the package.

Every error raised on purpose by this package derives from :class:`CleError`,
so callers can catch one type at an API boundary. ``ArgumentError`` doubles as
``ValueError`` because bad scalar arguments are what most callers probe for.
"""


class CleError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(CleError, ValueError):
    """An argument is outside its documented range or of the wrong shape."""


class FormatError(CleError):
    """A file or byte stream is not in the expected format."""


class IntegrityError(CleError):
    """A file parsed but its contents are truncated or inconsistent."""


class StateError(CleError):
    """An operation was called on an object in the wrong state."""


class DatasetError(CleError):
    """A dataset directory is missing, empty, or malformed."""


class NumericError(CleError):
    """A computation produced non-finite values."""
