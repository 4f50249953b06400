"""Workbench-specific error types."""


class IntegrationBlowupError(RuntimeError):
    """Raised when the integrator loses trace normalization; suggests a smaller dt."""


class TrainingDivergedError(RuntimeError):
    """Raised when network parameters become non-finite during training."""


class CheckpointMismatchError(ValueError):
    """Raised when a checkpoint is incompatible with the requested configuration."""
