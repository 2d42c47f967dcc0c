"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, ManifestMismatch -> 3,
CheckpointError -> 4, everything else -> 1.
"""


class LsmtcrError(Exception):
    """Base class for all package errors."""


class DataError(LsmtcrError):
    """Invalid or missing input data (bad residue, malformed CSV, absent file)."""


class ShapeError(LsmtcrError):
    """Tensor shape or dimension mismatch."""


class ConfigError(LsmtcrError):
    """Invalid run configuration value."""


class CheckpointError(LsmtcrError):
    """Corrupt or unreadable checkpoint (manifest parse failure, size mismatch)."""


class ManifestMismatch(LsmtcrError):
    """Checkpoint is readable but incompatible (dimension or vocabulary mismatch)."""
