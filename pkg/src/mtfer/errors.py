"""Exception types shared across the package.

Every public operation raises one of these instead of a bare ValueError so
callers (and the CLI exit-code mapping) can tell contract violations apart.
"""


class MtferError(Exception):
    """Base class for all package errors."""


class DimensionError(MtferError):
    """Shapes or lengths do not line up."""


class RangeError(MtferError):
    """A numeric argument is outside its allowed range."""


class NumericError(MtferError):
    """Non-finite values where finite ones are required."""


class UsageError(MtferError):
    """An API was called out of protocol (e.g. backward without a cache)."""


class ConfigError(MtferError):
    """A configuration object or file is invalid. Message names the field."""


class LabelError(MtferError):
    """A label is malformed or out of its class range."""


class RowError(MtferError):
    """A dataset row is malformed. Message carries the row number."""


class IngestionError(MtferError):
    """A dataset file referenced by an index is missing or unreadable."""


class LandmarkError(MtferError):
    """Eye coordinates are out of bounds or inconsistent."""


class FormatError(MtferError):
    """A binary file does not start with the expected magic/layout."""


class CorruptionError(MtferError):
    """A binary file's payload does not match its manifest."""


class VersionError(MtferError):
    """A binary file declares an unsupported format version."""


class SizeError(MtferError):
    """An input collection is empty or too small for the operation."""
