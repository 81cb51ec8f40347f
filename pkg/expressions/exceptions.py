from django.core.exceptions import ValidationError


class InfeasibleBandError(ValidationError):
    """The Sakoe-Chiba window cannot reach the end cell of the cost matrix."""


class UndefinedMetricsError(ValidationError):
    """Metrics were requested for a confusion matrix with no entries."""


class ContractError(RuntimeError):
    """A backward kernel was called without the context its forward saved."""


class DatasetLoadError(Exception):
    """Base class for everything that can go wrong reading a dataset directory."""


class ManifestError(DatasetLoadError):
    pass


class DimensionMismatchError(DatasetLoadError):
    pass


class ChecksumError(DatasetLoadError):
    pass
