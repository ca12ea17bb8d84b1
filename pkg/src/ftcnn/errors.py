"""Exception hierarchy shared across the package."""


class FtcnnError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(FtcnnError, ValueError):
    """Tensor shape or extent-product mismatch."""


class ArchitectureError(FtcnnError, ValueError):
    """Malformed or inconsistent architecture table."""


class InferenceError(FtcnnError, ValueError):
    """Input incompatible with the network during forward/backward."""


class ConfigError(FtcnnError, ValueError):
    """Invalid configuration value, plan name, or method name."""


class OptimizerError(FtcnnError, ValueError):
    """Gradient/parameter shape disagreement inside an update step."""


class TransferError(FtcnnError, ValueError):
    """Source and destination networks incompatible for weight transfer."""


class AugmentationError(FtcnnError, ValueError):
    """Augmentation input outside the supported geometry."""


class SamplingError(FtcnnError, ValueError):
    """Requested stratified sample cannot be balanced."""


class SplitError(FtcnnError, ValueError):
    """Dataset cannot be split at the unit level."""


class AggregationError(FtcnnError, ValueError):
    """Group score aggregation over an empty or inconsistent group."""


class EvaluationError(FtcnnError, ValueError):
    """Curve or statistic undefined for the given inputs."""


class ExtractionError(FtcnnError, ValueError):
    """Patch extraction constraints cannot be satisfied."""


class PipelineError(FtcnnError, ValueError):
    """Segmentation pipeline applied to an incompatible network or ROI."""


class NumericalError(FtcnnError, ArithmeticError):
    """Non-finite value encountered where finiteness is required."""


class ReportError(FtcnnError, RuntimeError):
    """Report generation failed, typically due to a missing artifact."""
