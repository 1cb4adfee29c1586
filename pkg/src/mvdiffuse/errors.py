"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is out of range, inconsistent, or unusable."""


class DataError(RuntimeError):
    """A dataset is missing, empty, or structurally invalid."""


class MetricError(RuntimeError):
    """A metric cannot be computed from the given inputs."""


class PatchBorderError(ValueError):
    """A patch crop would read outside the image bounds."""


class TrainingError(RuntimeError):
    """The optimization loop hit a non-recoverable numeric state."""
