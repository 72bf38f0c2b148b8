"""Exception hierarchy shared by every kervnet module."""


class KervnetError(Exception):
    """Base class for all library errors."""


class ShapeError(KervnetError, ValueError):
    pass


class DomainError(KervnetError, ValueError):
    pass


class ConfigurationError(KervnetError, ValueError):
    pass


class ContractError(KervnetError, RuntimeError):
    """A caller broke a documented precondition (stale cache, unfitted stats, ...)."""


class NumericDivergenceError(KervnetError, FloatingPointError):
    """A layer produced non-finite activations."""

    def __init__(self, layer: str, message: str = ""):
        self.layer = layer
        super().__init__(message or f"non-finite values produced by layer {layer!r}")


class TrainingDivergenceError(KervnetError, FloatingPointError):
    """Training hit a non-finite loss; ``report`` holds the epochs completed so far."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class DataError(KervnetError, ValueError):
    """Malformed or missing input data."""


class CheckpointError(KervnetError):
    pass


class ChecksumError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass
