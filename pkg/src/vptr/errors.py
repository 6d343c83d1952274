"""Exception types shared across the package."""


class VptrError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(VptrError, ValueError):
    """An array does not have the shape an operation requires."""


class MaskError(VptrError, ValueError):
    """An attention mask leaves some query row with no allowed key."""


class TensorFileError(VptrError, IOError):
    """A .vtn file is malformed (bad magic, version, dtype, or payload)."""


class ConfigError(VptrError, ValueError):
    """A run configuration is invalid or inconsistent with a checkpoint."""


class CheckpointError(VptrError, IOError):
    """A checkpoint bundle is missing, malformed, or fails its hash check."""


class TrainingDivergedError(VptrError, RuntimeError):
    """Training hit a non-finite loss; carries diagnostics in the message."""


class DatasetSpecError(VptrError, ValueError):
    """A synthetic dataset specification is invalid."""
