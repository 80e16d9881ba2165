"""Exception hierarchy shared by every restc module."""


class RestcError(Exception):
    """Base class for all library errors."""


class DimensionError(RestcError, ValueError):
    pass


class ContractError(RestcError, ValueError):
    """A precondition of an operation was violated by the caller."""


class DegenerateRowError(RestcError, ValueError):
    pass


class DegenerateEmbeddingError(RestcError, ValueError):
    pass


class ConfigError(RestcError, ValueError):
    pass


class TrainingDivergenceError(RestcError, FloatingPointError):
    """Raised when a NaN/inf shows up in a loss or gradient."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DataFormatError(RestcError, ValueError):
    pass


class EmptyDatasetError(RestcError, ValueError):
    pass


class CheckpointError(RestcError, ValueError):
    pass
