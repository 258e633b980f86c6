"""Source recovery by truncated-SVD inversion of the task filter matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .exceptions import DimensionError, RankError
from .hrf import SampledFilter, check_identifiable, toeplitz_filter_block
from .lagcorr import dehankelize, hankelize

DEFAULT_TRUNCATION = 0.90


def retained_count(n_values: int, truncation_fraction: float) -> int:
    """``max(1, ceil((1 - fraction) * n))`` with float noise in the product ignored."""
    kept = (1.0 - truncation_fraction) * n_values
    return max(1, math.ceil(kept - 1e-9))


@dataclass(frozen=True)
class TruncatedPinv:
    """Pseudo-inverse built from the largest singular triplets only."""

    u: NDArray = field(repr=False)
    s: NDArray
    vt: NDArray = field(repr=False)
    truncation_fraction: float
    n_total: int

    @property
    def matrix(self) -> NDArray:
        return (self.vt.T / self.s) @ self.u.T

    def __matmul__(self, other):
        coef = self.u.T @ other
        coef = coef / (self.s[:, None] if coef.ndim == 2 else self.s)
        return self.vt.T @ coef


def truncated_pinv(matrix, truncation_fraction: float = DEFAULT_TRUNCATION, mode: str = "count") -> TruncatedPinv:
    """Moore-Penrose inverse from the top singular values of ``matrix``.

    Parameters
    ----------
    matrix : array_like, 2-D
    truncation_fraction : float
        Share of the singular values to discard, smallest first.
    mode : {"count", "energy"}
        ``"count"`` keeps ``max(1, ceil((1 - f) n))`` values. ``"energy"``
        keeps the fewest values whose squared sum reaches ``1 - f`` of the total.

    Raises
    ------
    RankError
        If the matrix is identically zero.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2:
        raise DimensionError("truncated_pinv expects a 2-D matrix")
    if not 0.0 <= truncation_fraction < 1.0:
        raise ValueError("truncation_fraction must lie in [0, 1)")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise RankError("matrix has no nonzero singular value")
    if mode == "count":
        k = retained_count(s.size, truncation_fraction)
    elif mode == "energy":
        energy = np.cumsum(s**2) / np.sum(s**2)
        k = int(np.searchsorted(energy, 1.0 - truncation_fraction - 1e-12) + 1)
    else:
        raise ValueError(f"unknown truncation mode {mode!r}")
    k = min(k, int(np.count_nonzero(s > s[0] * np.finfo(float).eps * max(a.shape))))
    return TruncatedPinv(u[:, :k], s[:k], vt[:k], truncation_fraction, s.size)


@dataclass(frozen=True)
class SourceEstimate:
    """Recovered task source: Hankel rows and the collapsed time course."""

    hankel_rows: NDArray = field(repr=False)
    collapsed: NDArray = field(repr=False)
    fs: float


def task_filter_matrix(hrfs: Sequence[SampledFilter], stack_depth: int) -> NDArray:
    """Task block column ``H_T`` of the mixing matrix, ``(M L') x (L + L')``."""
    lengths = {h.length for h in hrfs}
    if len(lengths) != 1:
        raise DimensionError("HRFs must share a common length")
    return np.vstack([toeplitz_filter_block(h, stack_depth) for h in hrfs])


def estimate_sources(
    final_hrfs: Sequence[SampledFilter],
    series,
    stack_depth: int,
    truncation_fraction: float = DEFAULT_TRUNCATION,
    mode: str = "count",
) -> SourceEstimate:
    """Least-squares task source ``S_T = pinv(H_T) Y`` collapsed to one series.

    ``series`` is an ``M x N`` array or RoiTimeSeries. Row ``p`` of ``S_T``
    estimates ``s(n - p)``, so anti-diagonal averaging gives one value per
    time step; the ``L`` leading samples before ``t = 0`` are dropped.
    """
    data = np.atleast_2d(np.asarray(getattr(series, "data", series), dtype=float))
    fs = getattr(series, "fs", 1.0 / final_hrfs[0].dt)
    m, n = data.shape
    if len(final_hrfs) != m:
        raise DimensionError(f"{len(final_hrfs)} HRFs for {m} regions")
    order = final_hrfs[0].length - 1
    check_identifiable(m, order, stack_depth)
    h_task = task_filter_matrix(final_hrfs, stack_depth)
    y = hankelize(data, stack_depth).data
    if not np.any(y):
        rows = np.zeros((h_task.shape[1], y.shape[1]))
    else:
        rows = truncated_pinv(h_task, truncation_fraction, mode) @ y
    collapsed = dehankelize(rows, offset=stack_depth - 1)[-n:]
    return SourceEstimate(rows, collapsed, fs)
