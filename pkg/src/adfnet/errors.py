"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, rates or hyperparameters."""


class GraphUsageError(ValueError):
    """A differentiation request that the graph cannot answer."""


class UnsupportedOrderError(GraphUsageError):
    """Raised when asking for a third-order derivative."""


class LoadError(RuntimeError):
    """A parameter file is missing, corrupted or belongs to another config."""


class IngestionError(RuntimeError):
    """A dataset file could not be turned into a Dataset."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. constant targets)."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""
