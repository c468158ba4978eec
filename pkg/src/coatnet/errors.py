"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible (mismatched dims, bad broadcast, bad extent)."""


class NoGraphError(RuntimeError):
    """backward() was called on a tensor with no recorded graph (or a consumed one)."""


class ConfigError(ValueError):
    """A model/run configuration violates its invariants or names an unknown entry."""


class ResolutionError(ValueError):
    """Spatial grid does not match the bias tables; adapt the model first."""


class LabelError(ValueError):
    """A class id lies outside [0, num_classes)."""


class DivergedError(RuntimeError):
    """Training hit a non-finite loss."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class CheckpointError(RuntimeError):
    """Base class for checkpoint read/write failures."""


class IncompatibleCheckpointError(CheckpointError):
    """Stored manifest does not match the target model configuration."""


class CorruptCheckpointError(CheckpointError):
    """File is truncated or fails structural validation."""
