"""Exception hierarchy shared across pipeline stages."""


class AutoclusterError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(AutoclusterError):
    """Invalid or unknown configuration value."""


class ParameterError(AutoclusterError, ValueError):
    """A function argument lies outside its documented domain."""


class DataError(AutoclusterError):
    """Input data is missing, malformed or unusable."""


class SchemaError(DataError):
    def __init__(self, column: str):
        super().__init__(f"missing mandatory column: {column}")
        self.column = column


class EmptyInputError(DataError):
    pass


class UndefinedMetricError(AutoclusterError, ValueError):
    """A validity index is undefined for the given partition (e.g. a single cluster)."""


class SelectionError(AutoclusterError):
    """Feature selection produced a degenerate result that needs manual review."""


class StageError(AutoclusterError):
    """A pipeline stage could not produce its artifacts."""
