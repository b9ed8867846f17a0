"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with inputs that violate its shape contract."""


class DomainError(ValueError):
    """An operation was asked to evaluate outside its domain."""


class DataError(ValueError):
    """Input data is malformed (NaN coordinates, wrong joint count, ...)."""


class ConfigError(ValueError):
    """A configuration value or skeleton description is invalid."""


class GraphError(ConfigError):
    """A skeleton graph violates connectivity or simplicity requirements."""


class TrainingDiverged(RuntimeError):
    """Raised when a loss term turns non-finite during training."""

    def __init__(self, message, term=None, checkpoint=None):
        super().__init__(message)
        self.term = term
        self.checkpoint = checkpoint


class CheckpointError(ValueError):
    """A checkpoint cannot be used with the requested model or data."""
