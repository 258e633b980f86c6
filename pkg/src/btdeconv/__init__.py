"""Blind deconvolution of hemodynamic time series by structured block-term decomposition."""

from .config import PipelineConfig, load_config
from .estimator import BtdDeconvolver
from .exceptions import (
    BtdError,
    DimensionError,
    DivergenceError,
    EstimationError,
    IngestionError,
    NoInteriorPeakError,
    ParameterDomainError,
    PipelineError,
    RankError,
    SamplingError,
    ShapeError,
    StabilityError,
    ThresholdError,
)
from .hrf import HrfParams, MixingModel, SampledFilter, gamma_hrf, params_from_pl_fwhm
from .pipeline import run_montecarlo, run_pipeline
from .simulator import Experiment, RoiTimeSeries, make_experiment, synthesize

__version__ = "0.1.0"

__all__ = [
    "BtdDeconvolver", "PipelineConfig", "load_config", "run_pipeline", "run_montecarlo",
    "HrfParams", "SampledFilter", "MixingModel", "gamma_hrf", "params_from_pl_fwhm",
    "Experiment", "RoiTimeSeries", "make_experiment", "synthesize",
    "BtdError", "DimensionError", "DivergenceError", "EstimationError", "IngestionError",
    "NoInteriorPeakError", "ParameterDomainError", "PipelineError", "RankError",
    "SamplingError", "ShapeError", "StabilityError", "ThresholdError",
]
