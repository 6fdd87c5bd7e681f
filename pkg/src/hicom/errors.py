"""Exception types raised across the package."""


class HicomError(Exception):
    pass


class ShapeError(HicomError, ValueError):
    """Operand extents disagree."""


class ConfigError(HicomError, ValueError):
    """Invalid configuration or parameter kind."""


class NumericError(HicomError, FloatingPointError):
    """Non-finite input or an ill-conditioned probe."""


class FormatError(HicomError, ValueError):
    """Malformed tensor container."""
