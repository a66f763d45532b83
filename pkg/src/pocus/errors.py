"""Exception hierarchy shared across the toolkit."""


class PocusError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(PocusError):
    """A structured file (manifest, split, report) is missing required fields."""


class ValidationError(PocusError):
    """An input value violates a documented contract."""


class ConfigError(PocusError):
    """A configuration value is inconsistent or unusable."""


class UnsupportedOperationError(PocusError):
    """The requested operation is not defined for this architecture."""


class TrainingDivergedError(PocusError):
    """Training aborted because the loss became non-finite."""
