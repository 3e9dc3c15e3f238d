class CBNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CBNetError, ValueError):
    pass


class ContractError(CBNetError, ValueError):
    pass


class ConfigError(CBNetError, ValueError):
    pass


class DegenerateError(CBNetError, ValueError):
    """Raised when a statistic or loss has nothing to be computed from."""


class PlacementError(CBNetError, RuntimeError):
    pass


class FormatError(CBNetError, ValueError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
