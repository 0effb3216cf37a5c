"""Exception hierarchy shared across the package."""


class SensorAdvError(Exception):
    """Base class for all package errors."""


class DataFormatError(SensorAdvError, ValueError):
    """A recording file could not be parsed or violates dataset invariants.

    ``line`` (CSV, 1-based) or ``offset`` (binary, bytes) locate the problem
    when known.
    """

    def __init__(self, message, line=None, offset=None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (offset {offset})"
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class ShapeError(SensorAdvError, ValueError):
    """Tensor shapes do not agree with a layer's geometry."""


class CheckpointError(SensorAdvError):
    """Base class for checkpoint load failures."""


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class SpecMismatchError(CheckpointError):
    pass


class DivergenceError(SensorAdvError, FloatingPointError):
    """Training or an optimizer step produced non-finite values."""


class ConfigError(SensorAdvError, ValueError):
    """A run configuration failed validation."""
