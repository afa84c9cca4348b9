"""Exception types shared across the toolkit."""


class MfgkitError(Exception):
    """Base class for all toolkit errors."""


class BlowUpError(MfgkitError):
    """A Riccati sweep produced an entry beyond the magnitude bound (finite-time escape)."""


class DimensionMismatchError(MfgkitError):
    """Matrix dimensions of a field and its terminal condition disagree."""


class OutOfRangeError(MfgkitError):
    """A time query fell outside the solution grid."""


class GridMismatchError(MfgkitError):
    """Two objects were built on different time grids."""


class KindMismatchError(MfgkitError):
    """An operation restricted to one ansatz kind (control vs game) got the other."""


class ConfigError(MfgkitError):
    """Invalid or incomplete experiment configuration."""
