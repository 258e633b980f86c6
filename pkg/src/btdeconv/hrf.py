"""Single-gamma hemodynamic response kernels and their Toeplitz realizations.

The kernel is

    h(t) = theta1 * theta3**theta2 * t**(theta2 - 1) * exp(-theta3 * t) / Gamma(theta2)

sampled on ``t = k * dt`` for ``k = 0..L``. With ``theta2 > 1`` the first tap is
structurally zero and the kernel has a single interior maximum at
``(theta2 - 1) / theta3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq
from scipy.special import digamma, gammaln

from .exceptions import DimensionError, NoInteriorPeakError, ParameterDomainError, ShapeError

# bracket for the shape excess theta2 - 1 when inverting (PL, FWHM)
_SHAPE_EXCESS_BOUNDS = (1e-4, 1e4)


@dataclass(frozen=True)
class HrfParams:
    """Gamma-kernel parameter triple (amplitude, shape, rate in 1/s)."""

    theta1: float
    theta2: float
    theta3: float

    def __post_init__(self):
        if not math.isfinite(self.theta1):
            raise ParameterDomainError(f"theta1 must be finite, got {self.theta1}")
        if not (math.isfinite(self.theta2) and self.theta2 > 1.0):
            raise ParameterDomainError(f"theta2 must be > 1, got {self.theta2}")
        if not (math.isfinite(self.theta3) and self.theta3 > 0.0):
            raise ParameterDomainError(f"theta3 must be > 0, got {self.theta3}")

    def to_dict(self) -> dict:
        return {"theta1": self.theta1, "theta2": self.theta2, "theta3": self.theta3}

    @classmethod
    def from_dict(cls, d: dict) -> "HrfParams":
        return cls(float(d["theta1"]), float(d["theta2"]), float(d["theta3"]))


@dataclass(frozen=True)
class SampledFilter:
    """Filter taps ``h(0..L)`` sampled every ``dt`` seconds."""

    taps: NDArray = field(repr=False)
    dt: float

    def __post_init__(self):
        taps = np.array(self.taps, dtype=float).ravel()
        if taps.size < 1:
            raise ShapeError("a filter needs at least one tap")
        if not np.all(np.isfinite(taps)):
            raise ShapeError("filter taps must be finite")
        if not self.dt > 0:
            raise ShapeError(f"dt must be positive, got {self.dt}")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def length(self) -> int:
        return self.taps.size

    @property
    def times(self) -> NDArray:
        return np.arange(self.taps.size) * self.dt

    def normalized(self) -> "SampledFilter":
        """Copy scaled to unit positive peak (sign chosen by the largest |tap|)."""
        k = int(np.argmax(np.abs(self.taps)))
        peak = self.taps[k]
        if peak == 0:
            raise ShapeError("cannot normalize an all-zero filter")
        return SampledFilter(self.taps / peak, self.dt)


@dataclass(frozen=True)
class MixingModel:
    """Bank of convolutive mixing filters for one task and one artifact source.

    Parameters
    ----------
    task_filters : sequence of SampledFilter
        One HRF per region; all must share the same length ``L + 1``.
    artifact_gains : sequence of float
        Per-region scaling ``a_m`` of the directly additive artifact source.
    stack_depth : int
        Number of delayed samples ``L'`` stacked per region.
    require_identifiable : bool
        Enforce ``M L' >= 2 (L + L')``. Disable only to build toy matrices.
    """

    task_filters: tuple
    artifact_gains: NDArray = field(repr=False)
    stack_depth: int
    require_identifiable: bool = True

    def __post_init__(self):
        filters = tuple(self.task_filters)
        gains = np.array(self.artifact_gains, dtype=float).ravel()
        if len(filters) == 0:
            raise DimensionError("at least one region is required")
        if len({f.length for f in filters}) != 1:
            raise DimensionError("task filters must share a common length")
        if gains.size != len(filters):
            raise DimensionError(
                f"{gains.size} artifact gains for {len(filters)} task filters"
            )
        if self.stack_depth < 1:
            raise DimensionError(f"stack_depth must be >= 1, got {self.stack_depth}")
        if self.require_identifiable:
            check_identifiable(len(filters), filters[0].length - 1, self.stack_depth)
        gains.setflags(write=False)
        object.__setattr__(self, "task_filters", filters)
        object.__setattr__(self, "artifact_gains", gains)

    @property
    def m_regions(self) -> int:
        return len(self.task_filters)

    @property
    def filter_order(self) -> int:
        """``L``, so that each filter has ``L + 1`` taps."""
        return self.task_filters[0].length - 1


def check_identifiable(m_regions: int, filter_order: int, stack_depth: int, n_sources: int = 2):
    """Raise DimensionError unless ``M * L' >= R * (L + L')``."""
    if m_regions * stack_depth < n_sources * (filter_order + stack_depth):
        raise DimensionError(
            f"identifiability requires M*L' >= R*(L+L'): "
            f"{m_regions}*{stack_depth} < {n_sources}*({filter_order}+{stack_depth})"
        )


def _gamma_kernel(theta1, theta2, theta3, t):
    out = np.zeros_like(t, dtype=float)
    pos = t > 0
    tp = t[pos]
    log_shape = (theta2 - 1.0) * np.log(tp) - theta3 * tp + theta2 * math.log(theta3) - gammaln(theta2)
    out[pos] = theta1 * np.exp(log_shape)
    return out


def gamma_hrf(params: HrfParams, dt: float = 0.25, length: int = 41) -> SampledFilter:
    """Sample the single-gamma HRF on ``t = 0, dt, ..., (length - 1) * dt``.

    Parameters
    ----------
    params : HrfParams
        Amplitude, shape and rate of the kernel.
    dt : float
        Sampling interval in seconds.
    length : int
        Number of taps ``L + 1``.

    Returns
    -------
    SampledFilter
    """
    if not dt > 0:
        raise ParameterDomainError(f"dt must be positive, got {dt}")
    if length < 2:
        raise ParameterDomainError(f"length must be >= 2, got {length}")
    t = np.arange(length) * dt
    return SampledFilter(_gamma_kernel(params.theta1, params.theta2, params.theta3, t), dt)


def gamma_hrf_jacobian(theta1: float, theta2: float, theta3: float, dt: float, length: int):
    """Sampled kernel and its partial derivatives with respect to each parameter.

    Returns
    -------
    h, dh_dtheta1, dh_dtheta2, dh_dtheta3 : ndarray of shape (length,)
    """
    t = np.arange(length) * dt
    base = _gamma_kernel(1.0, theta2, theta3, t)
    log_t = np.zeros_like(t)
    log_t[1:] = np.log(t[1:])
    # t = 0 tap is identically zero for theta2 > 1, so its derivatives vanish too
    d2 = theta1 * base * (math.log(theta3) - digamma(theta2) + log_t)
    d3 = theta1 * base * (theta2 / theta3 - t)
    return theta1 * base, base, d2, d3


def peak_latency(params: HrfParams) -> float:
    """Time of the kernel maximum, ``(theta2 - 1) / theta3`` seconds."""
    if params.theta2 <= 1.0:
        raise NoInteriorPeakError(f"theta2={params.theta2} gives no interior peak")
    return (params.theta2 - 1.0) / params.theta3


def _unit_rate_width(theta2: float) -> float:
    """Continuous FWHM of ``t**(theta2-1) * exp(-t)``, found by root bracketing in log-time."""
    k = theta2 - 1.0
    if k <= 0:
        raise NoInteriorPeakError(f"theta2={theta2} gives no interior peak")
    x0 = math.log(k)
    ln2 = math.log(2.0)

    def g(x):
        # log(f(e^x) / f_max) + ln 2
        return k * (x - x0) - (math.exp(x) - k) + ln2

    lo = x0 - (ln2 + 1.0) / k - 1.0
    hi = x0 + 1.0
    while g(hi) > 0:
        hi += 1.0
    left = brentq(g, lo, x0, xtol=1e-14, rtol=1e-14)
    right = brentq(g, x0, hi, xtol=1e-14, rtol=1e-14)
    return math.exp(right) - math.exp(left)


def gamma_fwhm(params: HrfParams) -> float:
    """Continuous-time FWHM of the gamma kernel in seconds."""
    return _unit_rate_width(params.theta2) / params.theta3


def params_from_pl_fwhm(pl: float, width: float, theta1: float = 1.0) -> HrfParams:
    """Invert (peak latency, FWHM) in seconds to gamma parameters.

    The FWHM-to-latency ratio depends on ``theta2`` alone and decreases
    monotonically, so the shape is found by a 1-D root search and the rate
    follows from ``theta3 = (theta2 - 1) / pl``.

    Raises
    ------
    ParameterDomainError
        If the requested ratio falls outside the searchable shape range.
    """
    if not (pl > 0 and width > 0):
        raise ParameterDomainError(f"peak latency and FWHM must be positive, got {pl}, {width}")
    target = math.log(width / pl)

    def ratio_gap(z):
        k = math.exp(z)
        return math.log(_unit_rate_width(1.0 + k) / k) - target

    z_lo, z_hi = (math.log(b) for b in _SHAPE_EXCESS_BOUNDS)
    f_lo, f_hi = ratio_gap(z_lo), ratio_gap(z_hi)
    if f_lo * f_hi > 0:
        raise ParameterDomainError(f"no gamma kernel with PL={pl} s and FWHM={width} s")
    z = brentq(ratio_gap, z_lo, z_hi, xtol=1e-13, rtol=1e-13)
    k = math.exp(z)
    return HrfParams(theta1, 1.0 + k, k / pl)


def sampled_peak_latency(filt: SampledFilter) -> float:
    """Peak time of a sampled curve, refined by a parabola through the top three samples."""
    h = filt.taps
    k = int(np.argmax(h))
    if h[k] <= 0:
        raise ShapeError("filter has no positive peak")
    if 0 < k < h.size - 1:
        a, b, c = h[k - 1], h[k], h[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            return (k + 0.5 * (a - c) / denom) * filt.dt
    return k * filt.dt


def fwhm(filt: SampledFilter) -> float:
    """Full width at half maximum of a sampled curve, in seconds.

    The width spans the first up-crossing and the last down-crossing of half
    the peak value, each located by linear interpolation between samples.
    """
    h = filt.taps
    peak = h.max()
    if not peak > 0:
        raise ShapeError("FWHM needs a strictly positive maximum")
    half = 0.5 * peak
    above = np.flatnonzero(h >= half)
    i, j = above[0], above[-1]
    if i == 0:
        t_left = 0.0
    else:
        t_left = (i - 1) + (half - h[i - 1]) / (h[i] - h[i - 1])
    if j == h.size - 1:
        t_right = float(j)
    else:
        t_right = j + (h[j] - half) / (h[j] - h[j + 1])
    return (t_right - t_left) * filt.dt


def toeplitz_filter_block(filt: SampledFilter | Sequence[float], stack_depth: int) -> NDArray:
    """Banded Toeplitz matrix of shape ``(L', L + L')`` whose row ``i`` holds ``h(0..L)`` from column ``i``."""
    taps = filt.taps if isinstance(filt, SampledFilter) else np.asarray(filt, dtype=float)
    if stack_depth < 1:
        raise DimensionError(f"stack_depth must be >= 1, got {stack_depth}")
    order = taps.size - 1
    block = np.zeros((stack_depth, order + stack_depth))
    for i in range(stack_depth):
        block[i, i : i + order + 1] = taps
    return block


def build_mixing_matrix(model: MixingModel) -> NDArray:
    """Assemble ``H = [H_T  H_A]`` of shape ``(M L', 2 (L + L'))``.

    The task block column stacks each region's HRF Toeplitz block; the artifact
    block column stacks ``a_m`` times the Toeplitz block of a unit impulse.
    """
    order, depth = model.filter_order, model.stack_depth
    impulse = np.zeros(order + 1)
    impulse[0] = 1.0
    impulse_block = toeplitz_filter_block(impulse, depth)
    rows = [
        np.hstack([toeplitz_filter_block(f, depth), a * impulse_block])
        for f, a in zip(model.task_filters, model.artifact_gains)
    ]
    return np.vstack(rows)
