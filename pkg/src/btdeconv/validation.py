"""Input checks shared by the estimator, the pipeline and the CLI."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError
from .lagcorr import max_corr_lag


def check_region_matrix(X, min_regions: int = 2, min_samples: int = 2) -> np.ndarray:
    """Validate an ``(n_samples, n_regions)`` array of finite floats."""
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples,
                       ensure_min_features=min_regions)


def check_seed(seed) -> int:
    """Non-negative integer seed; ``None`` draws fresh OS entropy."""
    if seed is None:
        return int(np.random.SeedSequence().generate_state(1)[0])
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, numbers.Integral) or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def check_record_length(n_samples: int, filter_order: int, stack_depth: int, n_lags: int) -> None:
    """Raise when a recording is too short for the stacked lag estimates."""
    columns = n_samples - stack_depth + 1
    if columns <= n_lags:
        raise DimensionError(
            f"{n_samples} samples give {columns} stacked columns; need more than n_lags={n_lags}"
        )
    if n_samples <= max_corr_lag(filter_order, stack_depth, n_lags):
        raise DimensionError("recording is shorter than the largest modelled source lag")


def check_fraction(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value < 1.0:
        raise ValueError(f"{name} must lie in [0, 1), got {value}")
    return value
