"""Exception types shared across the package."""


class DredError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(DredError, ValueError):
    """A caller-supplied value violates a documented precondition."""


class FormatError(DredError, ValueError):
    """A serialized object (file, buffer, payload) is malformed or truncated."""
