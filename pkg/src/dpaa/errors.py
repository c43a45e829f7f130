"""Exception hierarchy shared by the library and the CLI."""


class DPAAError(Exception):
    """Base class; the CLI turns these into one-line error reports."""

    kind = "error"


class BoundsError(DPAAError, IndexError):
    kind = "bounds"


class ParameterError(DPAAError, ValueError):
    kind = "parameter"


class ConfigError(DPAAError, ValueError):
    kind = "config"


class DataError(DPAAError, ValueError):
    kind = "data"


class FormatError(DPAAError, ValueError):
    """Raised when a binary checkpoint or cache file cannot be parsed."""

    kind = "format"
