"""Synthetic multi-region recordings built as convolutive mixtures.

Each region observes a binary stimulus schedule convolved with its own gamma
HRF plus a region-scaled copy of one shared artifact process (a Gaussian
process whose mean jumps between random levels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.random import Generator
from numpy.typing import NDArray

from .exceptions import DimensionError, ParameterDomainError, SamplingError
from .hrf import HrfParams, gamma_hrf, params_from_pl_fwhm

PL_RANGE = (0.25, 4.5)
FWHM_RANGE = (0.5, 4.5)


def as_generator(rng) -> Generator:
    """Accept a seed, SeedSequence or Generator and return a Generator."""
    if isinstance(rng, Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class EpSchedule:
    """Binary stimulus schedule (experimental paradigm)."""

    onsets: tuple
    duration: float
    fs: float
    total_length: int

    def __post_init__(self):
        onsets = tuple(float(o) for o in self.onsets)
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise ParameterDomainError("onsets must be strictly increasing")
        object.__setattr__(self, "onsets", onsets)

    @property
    def stim_samples(self) -> int:
        return int(round(self.duration * self.fs))

    @property
    def onset_samples(self) -> NDArray:
        return np.rint(np.asarray(self.onsets) * self.fs).astype(int)

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return [(o, o + self.stim_samples / self.fs) for o in self.onsets]

    def binary(self) -> NDArray:
        ep = np.zeros(self.total_length)
        for k in self.onset_samples:
            ep[k : k + self.stim_samples] = 1.0
        return ep

    def to_dict(self) -> dict:
        return {
            "onsets": list(self.onsets),
            "duration": self.duration,
            "fs": self.fs,
            "total_length": self.total_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpSchedule":
        return cls(tuple(d["onsets"]), float(d["duration"]), float(d["fs"]), int(d["total_length"]))


@dataclass(frozen=True)
class ArtifactProcess:
    """One realization of the shared artifact source."""

    levels: NDArray = field(repr=False)
    change_samples: NDArray = field(repr=False)
    noise_std: float
    samples: NDArray = field(repr=False)

    def __post_init__(self):
        if self.noise_std < 0:
            raise ParameterDomainError("noise_std must be non-negative")
        if np.any(np.diff(self.change_samples) <= 0):
            raise ParameterDomainError("segment change times must increase")


@dataclass(frozen=True)
class RoiTimeSeries:
    """``M x N`` region-averaged time series sampled at ``fs`` Hz."""

    data: NDArray = field(repr=False)
    fs: float
    labels: tuple = ()

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        labels = tuple(self.labels) or tuple(f"roi{m + 1}" for m in range(data.shape[0]))
        if len(labels) != data.shape[0]:
            raise DimensionError(f"{len(labels)} labels for {data.shape[0]} regions")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)

    @property
    def m_regions(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def times(self) -> NDArray:
        return np.arange(self.n_samples) / self.fs

    def normalized(self) -> "RoiTimeSeries":
        """Rows shifted to zero mean and scaled to unit variance."""
        mu = self.data.mean(axis=1, keepdims=True)
        sd = self.data.std(axis=1, keepdims=True)
        if np.any(sd == 0):
            raise DimensionError("cannot normalize a constant region")
        return RoiTimeSeries((self.data - mu) / sd, self.fs, self.labels)


@dataclass(frozen=True)
class Experiment:
    """Everything needed to regenerate one synthetic recording."""

    schedule: EpSchedule
    hrf_params: tuple
    artifact: ArtifactProcess
    snr_db: float
    seed: Optional[int] = None
    filter_length: int = 41

    def __post_init__(self):
        object.__setattr__(self, "hrf_params", tuple(self.hrf_params))
        if len(self.hrf_params) < 2:
            raise DimensionError("an experiment needs at least two regions")
        if self.artifact.samples.size != self.schedule.total_length:
            raise DimensionError("artifact and schedule lengths differ")

    @property
    def m_regions(self) -> int:
        return len(self.hrf_params)

    @property
    def fs(self) -> float:
        return self.schedule.fs

    def true_hrfs(self):
        return [gamma_hrf(p, 1.0 / self.fs, self.filter_length) for p in self.hrf_params]


def generate_ep(
    n_reps: int = 20,
    stim_duration: float = 4.0,
    rest_range: tuple = (10.0, 15.0),
    fs: float = 4.0,
    rng=None,
) -> EpSchedule:
    """Draw a block design of ``n_reps`` stimuli with uniform random rests.

    A rest precedes every stimulus and one more follows the last, so the
    recording is ``n_reps`` stimuli plus ``n_reps + 1`` rests long.
    """
    if n_reps < 1:
        raise ParameterDomainError("n_reps must be >= 1")
    lo, hi = rest_range
    if lo > hi:
        raise ParameterDomainError(f"empty rest range {rest_range}")
    if not fs > 0:
        raise ParameterDomainError("fs must be positive")
    rng = as_generator(rng)
    stim = int(round(stim_duration * fs))
    rests = np.rint(rng.uniform(lo, hi, size=n_reps + 1) * fs).astype(int)
    onsets = []
    pos = 0
    for k in range(n_reps):
        pos += rests[k]
        onsets.append(pos / fs)
        pos += stim
    total = pos + rests[-1]
    return EpSchedule(tuple(onsets), stim_duration, fs, int(total))


def simulate_artifact(
    length: int,
    fs: float = 4.0,
    segment_dwell_range: tuple = (5.0, 10.0),
    mean_std: float = 1.0,
    noise_std: float = 1.0,
    rng=None,
) -> ArtifactProcess:
    """Piecewise-constant Gaussian mean levels plus white Gaussian noise."""
    if length < 1:
        raise ParameterDomainError("length must be >= 1")
    rng = as_generator(rng)
    lo, hi = segment_dwell_range
    starts = [0]
    while True:
        dwell = max(1, int(round(rng.uniform(lo, hi) * fs)))
        nxt = starts[-1] + dwell
        if nxt >= length:
            break
        starts.append(nxt)
    starts = np.asarray(starts)
    levels = rng.normal(0.0, mean_std, size=starts.size)
    bounds = np.append(starts, length)
    mean = np.repeat(levels, np.diff(bounds))
    samples = mean + rng.normal(0.0, noise_std, size=length)
    return ArtifactProcess(levels, starts, noise_std, samples)


def generate_artifact(length, fs=4.0, segment_dwell_range=(5.0, 10.0), mean_std=1.0, noise_std=1.0, rng=None):
    """Samples of :func:`simulate_artifact`."""
    return simulate_artifact(length, fs, segment_dwell_range, mean_std, noise_std, rng).samples


def sample_random_hrf_params(
    rng=None,
    pl_range: tuple = PL_RANGE,
    fwhm_range: tuple = FWHM_RANGE,
    max_tries: int = 100,
) -> HrfParams:
    """Draw a gamma HRF with uniformly distributed peak latency and FWHM.

    Raises
    ------
    SamplingError
        If no draw could be inverted within ``max_tries`` attempts.
    """
    rng = as_generator(rng)
    for _ in range(max_tries):
        pl = rng.uniform(*pl_range)
        width = rng.uniform(*fwhm_range)
        try:
            return params_from_pl_fwhm(pl, width)
        except (ParameterDomainError, ValueError):
            continue
    raise SamplingError(f"no invertible (PL, FWHM) pair after {max_tries} draws")


def make_experiment(
    seed: int,
    snr_db: float = 0.0,
    hrf_params: Optional[Sequence[HrfParams]] = None,
    m_regions: int = 3,
    n_reps: int = 20,
    stim_duration: float = 4.0,
    rest_range: tuple = (10.0, 15.0),
    fs: float = 4.0,
    filter_length: int = 41,
    dwell_range: tuple = (5.0, 10.0),
    mean_std: float = 1.0,
    noise_std: float = 1.0,
) -> Experiment:
    """Draw a full scenario from one seed (schedule, HRFs if not given, artifact)."""
    ss = np.random.SeedSequence(seed)
    ep_rng, hrf_rng, art_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    schedule = generate_ep(n_reps, stim_duration, rest_range, fs, ep_rng)
    if hrf_params is None:
        hrf_params = [sample_random_hrf_params(hrf_rng) for _ in range(m_regions)]
    artifact = simulate_artifact(schedule.total_length, fs, dwell_range, mean_std, noise_std, art_rng)
    return Experiment(schedule, tuple(hrf_params), artifact, snr_db, seed, filter_length)


def task_terms(experiment: Experiment) -> NDArray:
    """``M x N`` array of each region's HRF convolved with the schedule (causal, truncated)."""
    ep = experiment.schedule.binary()
    n = ep.size
    return np.vstack([np.convolve(ep, h.taps)[:n] for h in experiment.true_hrfs()])


def mixing_gains(experiment: Experiment) -> NDArray:
    """Artifact gains giving each region the target task-to-artifact variance ratio."""
    task_var = task_terms(experiment).var(axis=1)
    if np.any(task_var == 0):
        raise DimensionError("task term has zero variance; scenario is degenerate")
    if math.isinf(experiment.snr_db) and experiment.snr_db > 0:
        return np.zeros(experiment.m_regions)
    art_var = experiment.artifact.samples.var()
    if art_var == 0:
        raise DimensionError("artifact has zero variance; SNR cannot be set")
    return np.sqrt(task_var / (art_var * 10.0 ** (experiment.snr_db / 10.0)))


def synthesize(experiment: Experiment, normalize: bool = True) -> RoiTimeSeries:
    """Mix the schedule and the artifact into ``M`` region time series."""
    task = task_terms(experiment)
    gains = mixing_gains(experiment)
    data = task + gains[:, None] * experiment.artifact.samples[None, :]
    series = RoiTimeSeries(data, experiment.fs, tuple(f"roi{m + 1}" for m in range(experiment.m_regions)))
    return series.normalized() if normalize else series
