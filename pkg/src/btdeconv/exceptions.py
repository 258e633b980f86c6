"""Exception hierarchy shared by every stage of the deconvolution pipeline."""


class BtdError(Exception):
    """Base class for all errors raised by btdeconv."""


class ParameterDomainError(BtdError, ValueError):
    """HRF parameters fall outside the domain of the gamma kernel."""


class NoInteriorPeakError(ParameterDomainError):
    """Gamma shape parameter is too small for the kernel to have an interior peak."""


class ShapeError(BtdError, ValueError):
    """A sampled curve does not have the shape an operation requires."""


class DimensionError(BtdError, ValueError):
    """Array dimensions are inconsistent with the block-Hankel / Toeplitz layout."""


class EstimationError(BtdError, ValueError):
    """Too few samples to estimate a statistic."""


class DivergenceError(BtdError, RuntimeError):
    """An optimization run produced a non-finite cost."""


class PipelineError(BtdError, RuntimeError):
    """A pipeline stage failed as a whole.

    Parameters
    ----------
    message : str
        Description of the failure.
    stage : str, optional
        Name of the pipeline stage that failed; prefixed to the message.
    """

    def __init__(self, message, stage=None):
        self.stage = stage
        super().__init__(f"[{stage}] {message}" if stage else message)


class StabilityError(BtdError, RuntimeError):
    """Solution selection could not identify a stable cluster.

    The ``diagnostics`` attribute holds whatever intermediate state was
    available when selection failed (costs, retained runs, labels).
    """

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class RankError(BtdError, ValueError):
    """Matrix has no nonzero singular value."""


class ThresholdError(BtdError, ValueError):
    """A threshold cannot be chosen because the data has a single level."""


class SamplingError(BtdError, RuntimeError):
    """Random HRF parameters could not be drawn within the retry budget."""


class IngestionError(BtdError, ValueError):
    """Malformed input file."""
