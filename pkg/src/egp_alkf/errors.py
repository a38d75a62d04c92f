"""Exception hierarchy shared by all modules."""


class EstimationError(Exception):
    """Base class for numerical failures raised by this package."""


class DimensionMismatch(EstimationError, ValueError):
    pass


class SingularBlock(EstimationError):
    pass


class EigenFailure(EstimationError):
    pass


class SingularGram(EstimationError):
    pass


class SingularInnovation(EstimationError):
    pass


class SingularPrediction(EstimationError):
    pass


class RankDeficientG(EstimationError):
    pass


class NegativeVariance(EstimationError):
    """A variance fell below the roundoff clamp window."""


class ConfigError(ValueError):
    """Bad command-line flag or config-file entry."""
