"""Exception types shared across the package."""


class UsageError(RuntimeError):
    """An API was called in a way that cannot be executed (e.g. backward on a detached tensor)."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ParameterError(ValueError):
    """An argument value is outside its legal range."""


class ConfigError(ValueError):
    """A run configuration file is malformed or inconsistent."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match the target model."""


class StructureError(ValueError):
    """Two model components that must agree structurally do not."""
