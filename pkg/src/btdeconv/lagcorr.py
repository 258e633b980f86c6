"""Block-Hankel embedding and lagged autocorrelation tensors.

Observations are stacked as

    x(n) = [y_1(n), ..., y_1(n-L'+1), ..., y_M(n), ..., y_M(n-L'+1)]^T

and the tensor slices are ``R(tau) = E{x(n) x(n+tau)^T}`` for ``tau = 0..K``.
Under the convolutive model every slice equals ``H R_s(tau) H^T`` with a
block-diagonal source core whose Toeplitz blocks hold ``c(tau + i - j)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import block_diag, toeplitz

from .exceptions import DimensionError, EstimationError
from .hrf import MixingModel, build_mixing_matrix


@dataclass(frozen=True)
class HankelStack:
    """Delay-embedded observations, ``(M L') x (N - L' + 1)``."""

    data: NDArray = field(repr=False)
    m_regions: int
    stack_depth: int

    @property
    def n_columns(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LagCorrTensor:
    """Stack of ``K + 1`` lagged autocorrelation matrices, shape ``(K+1, M L', M L')``."""

    slices: NDArray = field(repr=False)
    m_regions: int
    stack_depth: int

    def __post_init__(self):
        s = np.asarray(self.slices, dtype=float)
        if s.ndim != 3 or s.shape[1] != s.shape[2]:
            raise DimensionError(f"slices must be (K+1, P, P), got {s.shape}")
        if s.shape[1] != self.m_regions * self.stack_depth:
            raise DimensionError("slice size does not match M * L'")
        if not np.all(np.isfinite(s)):
            raise EstimationError("tensor contains non-finite entries")
        object.__setattr__(self, "slices", s)

    @property
    def n_lags(self) -> int:
        return self.slices.shape[0]

    def frobenius_sq(self) -> float:
        return float(np.sum(self.slices**2))

    def block(self, tau: int, m: int, mp: int) -> NDArray:
        d = self.stack_depth
        return self.slices[tau, m * d : (m + 1) * d, mp * d : (mp + 1) * d]


@dataclass(frozen=True)
class SourceCorrSequence:
    """One-sided autocorrelation ``c(0..K_c)``; ``c(-k) = c(k)`` is implied."""

    values: NDArray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size < 1 or not np.all(np.isfinite(v)):
            raise EstimationError("correlation sequence must be nonempty and finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def two_sided(self) -> NDArray:
        """Values at lags ``-K_c..K_c``."""
        return np.concatenate([self.values[:0:-1], self.values])

    def at(self, k) -> NDArray:
        k = np.abs(np.asarray(k))
        if np.any(k >= self.values.size):
            raise DimensionError("requested lag beyond stored correlation sequence")
        return self.values[k]


def max_corr_lag(filter_order: int, stack_depth: int, n_lags: int) -> int:
    """Largest lag ``K + L + L' - 1`` at which the model reads a source correlation."""
    return (n_lags - 1) + filter_order + stack_depth - 1


def hankelize(series, stack_depth: int) -> HankelStack:
    """Delay-embed an ``M x N`` array (or RoiTimeSeries) with depth ``L'``.

    Column ``c`` corresponds to time ``n = c + L' - 1`` and holds
    ``y_m(n - i)`` at row ``m L' + i``.
    """
    data = getattr(series, "data", series)
    y = np.atleast_2d(np.asarray(data, dtype=float))
    m, n = y.shape
    if stack_depth < 1:
        raise DimensionError(f"stack_depth must be >= 1, got {stack_depth}")
    if n <= stack_depth:
        raise DimensionError(f"need N > L' (N={n}, L'={stack_depth})")
    cols = n - stack_depth + 1
    out = np.empty((m * stack_depth, cols))
    for r in range(m):
        for i in range(stack_depth):
            out[r * stack_depth + i] = y[r, stack_depth - 1 - i : stack_depth - 1 - i + cols]
    return HankelStack(out, m, stack_depth)


def dehankelize(block: NDArray, offset: int = 0) -> NDArray:
    """Average a single Hankel-structured block along its anti-diagonals.

    Row ``i``, column ``c`` of ``block`` is taken to estimate the sample at
    time ``c - i + offset``; the result covers times
    ``offset - (rows - 1) .. offset + cols - 1``.
    """
    block = np.asarray(block, dtype=float)
    rows, cols = block.shape
    idx = np.arange(cols)[None, :] - np.arange(rows)[:, None] + (rows - 1)
    length = rows + cols - 1
    # mean about a per-diagonal reference, so constant diagonals come back bit-exact
    ref = np.empty(length)
    ref[idx[0]] = block[0]
    ref[idx[1:, 0]] = block[1:, 0]
    dev = np.bincount(idx.ravel(), weights=(block - ref[idx]).ravel(), minlength=length)
    counts = np.bincount(idx.ravel(), minlength=length)
    return ref + dev / counts


def unstack(stack: HankelStack) -> NDArray:
    """Recover the ``M x N`` observations from a Hankel stack."""
    d = stack.stack_depth
    return np.vstack([dehankelize(stack.data[r * d : (r + 1) * d]) for r in range(stack.m_regions)])


def autocorr_tensor(stack: HankelStack, n_lags: int) -> LagCorrTensor:
    """Sample lagged autocorrelation of the stacked observation vectors.

    Slice ``tau`` is ``sum_n x(n) x(n+tau)^T / (N_v - tau)`` over the
    ``N_v`` valid columns; slice 0 is symmetrized afterwards.
    """
    x = stack.data
    nv = x.shape[1]
    if n_lags < 1:
        raise EstimationError("need at least one lag")
    if nv <= n_lags:
        raise EstimationError(f"{nv} stacked columns cannot support {n_lags} lags")
    p = x.shape[0]
    slices = np.empty((n_lags, p, p))
    for tau in range(n_lags):
        slices[tau] = x[:, : nv - tau] @ x[:, tau:].T / (nv - tau)
    slices[0] = 0.5 * (slices[0] + slices[0].T)
    return LagCorrTensor(slices, stack.m_regions, stack.stack_depth)


def core_slice(corr: SourceCorrSequence, size: int, tau: int) -> NDArray:
    """Toeplitz source-autocorrelation block with entry ``(i, j) = c(tau + i - j)``."""
    col = corr.at(tau + np.arange(size))
    row = corr.at(tau - np.arange(size))
    return toeplitz(col, row)


def model_tensor(
    model: MixingModel,
    task_corr: SourceCorrSequence,
    artifact_corr: SourceCorrSequence,
    n_lags: int,
) -> LagCorrTensor:
    """Population tensor ``H blockdiag(C_T(tau), C_A(tau)) H^T`` for ``tau = 0..n_lags-1``."""
    mixing = build_mixing_matrix(model)
    width = model.filter_order + model.stack_depth
    need = max_corr_lag(model.filter_order, model.stack_depth, n_lags)
    for name, c in (("task", task_corr), ("artifact", artifact_corr)):
        if c.values.size <= need:
            raise DimensionError(f"{name} correlation needs lags 0..{need}, has {c.values.size}")
    slices = np.empty((n_lags, mixing.shape[0], mixing.shape[0]))
    for tau in range(n_lags):
        core = block_diag(core_slice(task_corr, width, tau), core_slice(artifact_corr, width, tau))
        slices[tau] = mixing @ core @ mixing.T
    return LagCorrTensor(slices, model.m_regions, model.stack_depth)
