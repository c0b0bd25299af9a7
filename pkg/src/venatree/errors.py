"""Exception hierarchy shared across the package.

Two families matter for the CLI exit-code mapping: ``ValidationError``
(bad inputs, exit 2) and ``FileFormatError`` (unreadable/unwritable
artifacts, exit 3). Anything else is an internal error (exit 4).
"""


class VenatreeError(Exception):
    """Base class for all package errors."""


class ValidationError(VenatreeError):
    """Invalid input data, configuration, or precondition."""


class ConfigError(ValidationError):
    """A configuration value violates its invariants."""


class InvalidTreeError(ValidationError):
    """A vessel tree failed structural validation."""


class PreconditionError(ValidationError):
    """An operation was called with arguments outside its domain."""


class CapacityError(ValidationError):
    """Rejection sampling exhausted its attempt budget."""


class GridMismatchError(ValidationError):
    """Two volumes do not share the same grid dimensions."""


class DegenerateRangeError(ValidationError):
    """A volume is constant where a nontrivial value range is required."""


class EmptyForegroundError(ValidationError):
    """Thresholding produced no foreground voxels."""


class ManifestError(ValidationError):
    """A dataset manifest violates its invariants."""


class FileFormatError(VenatreeError):
    """A persisted artifact cannot be parsed or produced."""


class MalformedHeaderError(FileFormatError):
    """A volume file header fails a checked-field constraint."""


class TruncatedFileError(FileFormatError):
    """A volume file payload is shorter than its header promises."""


class UnsupportedDatatypeError(FileFormatError):
    """A voxel datatype outside the supported {uint8, int16, float32} set."""


class UnsupportedFormatError(FileFormatError):
    """A recognized but unsupported file variant (e.g. two-file NIfTI)."""
