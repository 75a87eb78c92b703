"""Exception types raised by the correspondence library."""


class CorrespondenceError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CorrespondenceError, ValueError):
    """Shapes, channel counts or grid sizes do not agree."""


class ConfigError(CorrespondenceError, ValueError):
    """A configuration value, loss weight or hyperparameter is invalid."""


class UsageError(CorrespondenceError, RuntimeError):
    """The API was called in a way it does not support."""


class DivergenceError(CorrespondenceError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class CheckpointFormatError(CorrespondenceError, ValueError):
    """A checkpoint file is truncated, corrupt or of an unknown version."""


class ImageFormatError(CorrespondenceError, ValueError):
    """A PGM/PPM file could not be parsed."""
