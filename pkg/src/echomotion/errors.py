"""Exception types shared across the package."""


class EchoMotionError(Exception):
    """Base class for all package errors."""


class ConfigError(EchoMotionError):
    """Bad or inconsistent run configuration."""


class SpecError(EchoMotionError):
    """Invalid parameter or argument value (out of range, unsupported)."""


class FormatError(EchoMotionError):
    """Corrupt, truncated, or version-mismatched file."""


class ShapeError(EchoMotionError):
    """Array arguments with inconsistent shapes."""


class TrainingDivergedError(EchoMotionError):
    """Loss became non-finite during training."""
