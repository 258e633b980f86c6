"""Evaluation metrics for recovered schedules, HRFs and response variability."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.signal import find_peaks

from .exceptions import DimensionError, EstimationError, ThresholdError
from .hrf import SampledFilter, fwhm, sampled_peak_latency
from .stability import otsu_threshold


@dataclass(frozen=True)
class BinarySchedule:
    """Ordered, disjoint on-intervals ``(start, end)`` in seconds."""

    intervals: tuple = ()

    def __post_init__(self):
        iv = tuple((float(a), float(b)) for a, b in self.intervals)
        for a, b in iv:
            if not b > a:
                raise ValueError(f"interval ({a}, {b}) is empty")
        for (_, b0), (a1, _) in zip(iv, iv[1:]):
            if a1 < b0:
                raise ValueError("intervals must be ordered and disjoint")
        object.__setattr__(self, "intervals", iv)

    def __len__(self):
        return len(self.intervals)

    @classmethod
    def from_mask(cls, mask, fs: float) -> "BinarySchedule":
        """Runs of true samples; a run over samples ``i..j`` spans ``[i/fs, (j+1)/fs]``."""
        m = np.concatenate([[0], np.asarray(mask, dtype=np.int8), [0]])
        edges = np.diff(m)
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        return cls(tuple((s / fs, e / fs) for s, e in zip(starts, ends)))

    @classmethod
    def from_onsets(cls, onsets, duration: float) -> "BinarySchedule":
        return cls(tuple((o, o + duration) for o in onsets))

    @property
    def onsets(self) -> list[float]:
        return [a for a, _ in self.intervals]


def binarize_global(signal, fs: float, threshold: float | None = None) -> BinarySchedule:
    """Threshold a signal (Otsu unless ``threshold`` is given) into on-intervals.

    Raises
    ------
    ThresholdError
        If the signal is constant.
    """
    x = np.asarray(signal, dtype=float).ravel()
    if threshold is None:
        threshold = otsu_threshold(x)
        if threshold is None:
            raise ThresholdError("constant signal has no Otsu threshold")
    return BinarySchedule.from_mask(x > threshold, fs)


class IouResult(NamedTuple):
    per_repetition: list
    mean: float
    false_positives: int


def _iou(a, b) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    return inter / (max(a[1], b[1]) - min(a[0], b[0]))


def iou_seconds(truth: BinarySchedule, estimate: BinarySchedule, duration: float = 4.0) -> IouResult:
    """Per-repetition IoU against the best-overlapping estimate, scaled to seconds.

    Estimated intervals that overlap no true repetition are counted as false
    positives and do not affect the IoU values.
    """
    if len(truth) == 0:
        raise ValueError("truth schedule is empty")
    scores = []
    for t in truth.intervals:
        best = max((_iou(t, e) for e in estimate.intervals), default=0.0)
        scores.append(best * duration)
    fp = sum(1 for e in estimate.intervals if all(_iou(t, e) == 0 for t in truth.intervals))
    return IouResult(scores, float(np.mean(scores)), fp)


def _paired(true_hrfs, est_hrfs):
    if len(true_hrfs) != len(est_hrfs):
        raise DimensionError(f"{len(true_hrfs)} true HRFs vs {len(est_hrfs)} estimated")


def pl_error(true_hrfs: Sequence[SampledFilter], est_hrfs: Sequence[SampledFilter]):
    """Absolute peak-latency differences per region (seconds) and their mean."""
    _paired(true_hrfs, est_hrfs)
    err = np.array([abs(sampled_peak_latency(a) - sampled_peak_latency(b)) for a, b in zip(true_hrfs, est_hrfs)])
    return err, float(err.mean())


def fwhm_error(true_hrfs: Sequence[SampledFilter], est_hrfs: Sequence[SampledFilter]):
    """Absolute FWHM differences per region (seconds) and their mean."""
    _paired(true_hrfs, est_hrfs)
    err = np.array([abs(fwhm(a) - fwhm(b)) for a, b in zip(true_hrfs, est_hrfs)])
    return err, float(err.mean())


def reconstruct_ep_from_peaks(source, fs: float, min_separation: float = 10.0,
                              height_std: float = 0.5, rel_level: float = 0.5) -> BinarySchedule:
    """Schedule from local peaks of a source whose amplitude varies across repetitions.

    Peaks must exceed ``mean + height_std * std`` and be ``min_separation``
    seconds apart. Each interval runs from the first sample before the peak
    that rises above ``peak - rel_level * prominence`` to the first sample
    after it that drops below that level.
    """
    x = np.asarray(source, dtype=float).ravel()
    if x.size <= min_separation * fs:
        raise DimensionError("signal is shorter than the minimum peak separation")
    sd = x.std()
    if sd == 0:
        return BinarySchedule()
    distance = max(1, int(round(min_separation * fs)))
    peaks, props = find_peaks(x, height=x.mean() + height_std * sd, distance=distance, prominence=0.0)
    intervals = []
    for p, prom in zip(peaks, props["prominences"]):
        level = x[p] - rel_level * prom
        i = p
        while i > 0 and x[i - 1] > level:
            i -= 1
        j = p
        while j < x.size - 1 and x[j + 1] > level:
            j += 1
        start, end = i / fs, (j + 1) / fs
        if intervals and start < intervals[-1][1]:
            start = intervals[-1][1]
            if end <= start:
                continue
        intervals.append((start, end))
    return BinarySchedule(tuple(intervals))


def _windows(series, ep: BinarySchedule, window: float, fs: float | None):
    data = np.atleast_2d(np.asarray(getattr(series, "data", series), dtype=float))
    fs = getattr(series, "fs", fs)
    if fs is None:
        raise ValueError("sampling rate is required")
    w = int(round(window * fs))
    starts = [int(round(o * fs)) for o in ep.onsets]
    if not starts:
        raise EstimationError("schedule has no stimuli")
    if any(s < 0 or s + w >= data.shape[1] for s in starts):
        raise EstimationError("a post-stimulus window extends past the recording")
    return np.stack([data[:, s : s + w + 1] for s in starts], axis=1)


def fano_factor(series, ep: BinarySchedule, window: float = 10.0, fs: float | None = None) -> NDArray:
    """Variance-to-mean ratio of per-repetition peak responses, per region.

    The peak of each repetition is the maximum over ``[onset, onset + window]``
    and the variance uses the ``n - 1`` denominator.

    Raises
    ------
    EstimationError
        If a region's mean peak is not positive or a window falls off the end.
    """
    peaks = _windows(series, ep, window, fs).max(axis=2)
    mean = peaks.mean(axis=1)
    if np.any(mean <= 0):
        raise EstimationError("Fano factor is undefined for a non-positive mean peak")
    return peaks.var(axis=1, ddof=1) / mean


def fano_from_peaks(peaks) -> float:
    p = np.asarray(peaks, dtype=float)
    if p.mean() <= 0:
        raise EstimationError("Fano factor is undefined for a non-positive mean peak")
    return float(p.var(ddof=1) / p.mean())


def averaged_response(series, ep: BinarySchedule, window: float = 10.0, fs: float | None = None) -> NDArray:
    """Mean post-stimulus response per region, shape ``(M, window * fs + 1)``."""
    return _windows(series, ep, window, fs).mean(axis=1)


@dataclass
class EvalReport:
    """Scores of one recovered recording against its ground truth."""

    iou_seconds_mean: float
    iou_per_repetition: list
    false_positives: int
    pl_error_per_region: list = field(default_factory=list)
    pl_error_mean: float = float("nan")
    fwhm_error_per_region: list = field(default_factory=list)
    fwhm_error_mean: float = float("nan")
    fano_factors: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def flat_row(self) -> dict:
        row = {k: v for k, v in self.metadata.items() if np.isscalar(v)}
        row.update({
            "iou_seconds_mean": self.iou_seconds_mean,
            "false_positives": self.false_positives,
            "pl_error_mean": self.pl_error_mean,
            "fwhm_error_mean": self.fwhm_error_mean,
        })
        for i, v in enumerate(self.pl_error_per_region):
            row[f"pl_error_{i + 1}"] = v
        return row
