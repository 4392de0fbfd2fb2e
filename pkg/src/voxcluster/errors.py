"""Exception hierarchy. ``ConfigError`` and its subclasses map to CLI exit code 2."""


class VoxError(Exception):
    """Base class for all package errors."""


class ConfigError(VoxError, ValueError):
    """Invalid parameters or configuration."""


class FormatError(VoxError, ValueError):
    """Malformed file or byte stream."""


class UnsupportedError(FormatError):
    """Well-formed input in a codec/bit depth this package does not handle."""


class ManifestError(ConfigError):
    pass


class TooShortError(ConfigError):
    """Clip shorter than the 1 s analysis window."""


class DimensionError(VoxError, ValueError):
    pass


class StateError(VoxError, RuntimeError):
    pass


class TrainingDivergedError(VoxError, RuntimeError):
    pass
