"""Exception hierarchy shared by all gluplap modules."""


class GlupError(Exception):
    """Base class for all gluplap errors."""


class FormatError(GlupError):
    """A file does not conform to its declared on-disk format."""


class DataError(GlupError):
    """Numeric contents violate an invariant (shape, finiteness, coverage)."""


class IoError(GlupError):
    """An underlying read/write failed (missing file, unwritable path)."""


class ConfigError(GlupError):
    """A configuration value is missing, malformed, or infeasible."""


class NumericalError(GlupError):
    """A numerical routine failed to converge or produced non-finite values."""
