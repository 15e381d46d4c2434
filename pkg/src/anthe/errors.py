"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ConfigError(ValueError):
    """An architecture or training configuration violates an invariant."""


class DataError(ValueError):
    """Input data is malformed, empty or non-finite."""


class CheckpointError(IOError):
    """A checkpoint file cannot be read back into a model."""
