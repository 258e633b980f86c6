"""Scikit-learn style front end for blind HRF deconvolution."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DimensionError, PipelineError, StabilityError
from .hrf import SampledFilter, fwhm, sampled_peak_latency
from .lagcorr import autocorr_tensor, hankelize
from .metrics import binarize_global
from .recovery import estimate_sources
from .solver import BtdDims, SolverConfig, multi_start
from .stability import select_stable
from .validation import check_fraction, check_record_length, check_region_matrix, check_seed

FINE_DT = 0.01


def _fine_grid(filter_length: int, dt: float) -> int:
    return int(round((filter_length - 1) * dt / FINE_DT)) + 1


class BtdDeconvolver(TransformerMixin, BaseEstimator):
    """Blind deconvolution of region time series into gamma HRFs and a task source.

    ``fit`` decomposes the lagged autocorrelation tensor from many random
    starts and keeps the most stable cluster of solutions. ``transform``
    inverts the fitted task filters to give the source time course and
    ``predict`` binarizes it.

    Parameters
    ----------
    fs : float
        Sampling rate in Hz.
    filter_length : int
        HRF taps ``L + 1``.
    stack_depth : int, optional
        Delay-embedding depth ``L'``; ``2 L`` when omitted.
    n_lags : int, optional
        Lag slices of the tensor; ``L + 1`` when omitted.
    n_starts, max_iterations, gradient_tolerance, cost_tolerance
        Multi-start quasi-Newton settings.
    truncation_fraction : float
        Share of singular values dropped when inverting the filter matrix.
    truncation_mode : {"count", "energy"}
    cluster_cut : float
        Dendrogram cut in seconds.
    normalize : bool
        Standardize each region before fitting and transforming.
    random_state : int or None

    Attributes
    ----------
    hrfs_ : list of SampledFilter
        Unit-peak member-mean HRFs on the sampling grid.
    peak_latencies_, fwhms_ : ndarray
        Shape descriptors of the mean HRFs on a 10 ms grid.
    solutions_ : list of BtdSolution
    report_ : ClusterReport
    """

    def __init__(self, fs=4.0, filter_length=41, stack_depth=None, n_lags=None, n_starts=20,
                 max_iterations=500, gradient_tolerance=1e-8, cost_tolerance=1e-12,
                 truncation_fraction=0.90, truncation_mode="count", cluster_cut=0.5,
                 normalize=True, random_state=0):
        self.fs = fs
        self.filter_length = filter_length
        self.stack_depth = stack_depth
        self.n_lags = n_lags
        self.n_starts = n_starts
        self.max_iterations = max_iterations
        self.gradient_tolerance = gradient_tolerance
        self.cost_tolerance = cost_tolerance
        self.truncation_fraction = truncation_fraction
        self.truncation_mode = truncation_mode
        self.cluster_cut = cluster_cut
        self.normalize = normalize
        self.random_state = random_state

    def _dims(self, n_regions: int) -> BtdDims:
        order = int(self.filter_length) - 1
        depth = 2 * order if self.stack_depth is None else int(self.stack_depth)
        lags = order + 1 if self.n_lags is None else int(self.n_lags)
        return BtdDims(n_regions, order, depth, lags, 1.0 / float(self.fs))

    def _scale(self, X):
        if not self.normalize:
            return X
        return (X - self.mean_) / self.scale_

    def fit(self, X, y=None):
        """Estimate the HRFs from an ``(n_samples, n_regions)`` array."""
        if not float(self.fs) > 0:
            raise ValueError("fs must be positive")
        check_fraction(self.truncation_fraction, "truncation_fraction")
        seed = check_seed(self.random_state)
        X = check_region_matrix(X)
        n, m = X.shape
        dims = self._dims(m)
        check_record_length(n, dims.filter_order, dims.stack_depth, dims.n_lags)

        self.n_features_in_ = m
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        if self.normalize and np.any(self.scale_ == 0):
            raise DimensionError("cannot normalize a constant region")
        Z = self._scale(X)

        try:
            target = autocorr_tensor(hankelize(Z.T, dims.stack_depth), dims.n_lags)
        except Exception as exc:
            raise PipelineError(str(exc), stage="tensor") from exc
        config = SolverConfig(
            max_iterations=int(self.max_iterations),
            gradient_tolerance=float(self.gradient_tolerance),
            cost_tolerance=float(self.cost_tolerance),
            n_starts=int(self.n_starts),
            seed=seed,
            filter_length=dims.filter_length,
            dt=dims.dt,
        )
        self.solutions_ = multi_start(target, config, dims)
        try:
            self.report_ = select_stable(self.solutions_, cut=float(self.cluster_cut))
        except StabilityError as exc:
            raise PipelineError(str(exc), stage="select") from exc

        self.dims_ = dims
        self.seed_ = seed
        self.hrfs_ = self.report_.mean_hrfs
        fine = self.report_.mean_hrfs_at(FINE_DT, _fine_grid(dims.filter_length, dims.dt))
        self.peak_latencies_ = np.array([sampled_peak_latency(h) for h in fine])
        self.fwhms_ = np.array([fwhm(h) for h in fine])
        return self

    def transform(self, X):
        """Recovered task source, shape ``(n_samples, 1)``."""
        check_is_fitted(self, "hrfs_")
        X = check_region_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"fitted on {self.n_features_in_} regions, got {X.shape[1]}")
        est = estimate_sources(self.hrfs_, self._scale(X).T, self.dims_.stack_depth,
                               float(self.truncation_fraction), self.truncation_mode)
        return est.collapsed[:, None]

    def predict(self, X):
        """Binary on/off schedule (0/1 per sample) from a global Otsu threshold."""
        source = self.transform(X).ravel()
        schedule = binarize_global(source, float(self.fs))
        mask = np.zeros(source.size, dtype=int)
        for a, b in schedule.intervals:
            mask[int(round(a * self.fs)) : int(round(b * self.fs))] = 1
        return mask

    def fitted_hrfs_at(self, dt: float, length: int) -> list[SampledFilter]:
        check_is_fitted(self, "report_")
        return self.report_.mean_hrfs_at(dt, length)
