"""Exception types raised by whtnet."""


class WhtError(Exception):
    """Base class for library errors."""


class OrderTooLargeError(WhtError, ValueError):
    pass


class NotPowerOfTwoError(WhtError, ValueError):
    pass


class LengthMismatchError(WhtError, ValueError):
    pass


class ShapeError(WhtError, ValueError):
    pass


class ConfigError(WhtError, ValueError):
    pass


class DatasetError(WhtError, ValueError):
    """Malformed or truncated dataset file."""


class DivergenceError(WhtError, RuntimeError):
    """Training loss became non-finite."""
