"""Choosing one HRF estimate out of many randomly initialized decompositions.

Runs with outlying (high) final cost are dropped by an Otsu split of the cost
vector. The survivors are clustered on their per-region peak latencies with
complete linkage, and the cluster with the smallest size-normalized diameter
wins. Its member HRFs are averaged sample-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

from .exceptions import StabilityError
from .hrf import HrfParams, SampledFilter, gamma_hrf

DEFAULT_CUT = 0.5


def otsu_threshold(values) -> float | None:
    """Exact Otsu threshold of a 1-D sample.

    Candidate thresholds are the midpoints between consecutive distinct
    values; the one maximizing the between-class variance wins (the lowest
    one on ties). Returns ``None`` when all values are equal.
    """
    x = np.sort(np.asarray(values, dtype=float).ravel())
    uniq, counts = np.unique(x, return_counts=True)
    if uniq.size < 2:
        return None
    n = x.size
    w0 = np.cumsum(counts)[:-1] / n
    s0 = np.cumsum(uniq * counts)[:-1]
    total = s0[-1] + uniq[-1] * counts[-1]
    mu0 = s0 / (w0 * n)
    mu1 = (total - s0) / ((1.0 - w0) * n)
    between = w0 * (1.0 - w0) * (mu0 - mu1) ** 2
    k = int(np.argmax(between))
    return 0.5 * (uniq[k] + uniq[k + 1])


def otsu_reject(costs: Sequence[float]) -> NDArray:
    """Indices of the runs kept after discarding the high-cost Otsu class.

    Raises
    ------
    StabilityError
        If fewer than two costs are given or fewer than two runs survive.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.size < 2:
        raise StabilityError("need at least two runs to reject outliers", {"costs": costs.tolist()})
    t = otsu_threshold(costs)
    keep = np.arange(costs.size) if t is None else np.flatnonzero(costs <= t)
    if keep.size < 2:
        raise StabilityError(
            f"only {keep.size} run(s) below the Otsu cost threshold",
            {"costs": costs.tolist(), "threshold": t},
        )
    return keep


@dataclass(frozen=True)
class SolutionFeatures:
    """Peak latencies (seconds) of the retained runs, one row per run."""

    latencies: NDArray = field(repr=False)
    run_indices: NDArray = field(repr=False)

    def __post_init__(self):
        lat = np.atleast_2d(np.asarray(self.latencies, dtype=float))
        if not np.all(np.isfinite(lat)) or np.any(lat <= 0):
            raise StabilityError("peak latencies must be finite and positive")
        object.__setattr__(self, "latencies", lat)
        object.__setattr__(self, "run_indices", np.asarray(self.run_indices, dtype=int))


@dataclass(frozen=True)
class Clustering:
    labels: NDArray
    merges: NDArray


def cluster_latencies(features: SolutionFeatures | NDArray, cut: float = DEFAULT_CUT) -> Clustering:
    """Complete-linkage clustering of latency vectors, cut at ``cut`` seconds."""
    x = features.latencies if isinstance(features, SolutionFeatures) else np.atleast_2d(features)
    if x.shape[0] < 2:
        raise StabilityError("need at least two observations to cluster")
    merges = linkage(x, method="complete", metric="euclidean")
    labels = fcluster(merges, t=cut, criterion="distance")
    return Clustering(labels, merges)


def intracluster_distance(points) -> float:
    """Complete diameter of the cluster divided by its size."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[0] == 0:
        raise StabilityError("empty cluster")
    diameter = pdist(x).max() if x.shape[0] > 1 else 0.0
    return float(diameter) / x.shape[0]


def mean_hrf(params_per_run: Sequence[Sequence[HrfParams]], dt: float, length: int) -> list[SampledFilter]:
    """Sample-wise mean of unit-peak member curves, renormalized to unit peak."""
    m = len(params_per_run[0])
    out = []
    for r in range(m):
        curves = [gamma_hrf(run[r], dt, length).normalized().taps for run in params_per_run]
        out.append(SampledFilter(np.mean(curves, axis=0), dt).normalized())
    return out


@dataclass
class ClusterReport:
    """Outcome of the stable-solution selection."""

    retained: NDArray
    labels: NDArray
    merges: NDArray
    distances: dict
    sizes: dict
    selected: int
    members: NDArray
    member_params: list = field(repr=False)
    mean_hrfs: list = field(repr=False)

    def mean_hrfs_at(self, dt: float, length: int) -> list[SampledFilter]:
        """Member-average HRFs re-rendered on another time grid."""
        return mean_hrf(self.member_params, dt, length)

    def to_dict(self) -> dict:
        return {
            "retained": self.retained.tolist(),
            "labels": self.labels.tolist(),
            "selected_cluster": self.selected,
            "members": self.members.tolist(),
            "clusters": {
                str(c): {"d_C": self.distances[c], "n_C": self.sizes[c]} for c in sorted(self.distances)
            },
        }


def select_stable(solutions, costs=None, cut: float = DEFAULT_CUT) -> ClusterReport:
    """Pick the most coherent recurring cluster of solutions.

    Parameters
    ----------
    solutions : sequence of BtdSolution
        Multi-start output.
    costs : sequence of float, optional
        Final costs; taken from ``solutions`` when omitted.
    cut : float
        Complete-linkage distance (seconds) at which the dendrogram is cut.

    Raises
    ------
    StabilityError
        When no cluster has at least two members.
    """
    if costs is None:
        costs = [s.final_cost for s in solutions]
    retained = otsu_reject(costs)
    lat = np.array([solutions[i].peak_latencies for i in retained])
    features = SolutionFeatures(lat, retained)
    clustering = cluster_latencies(features, cut)

    distances, sizes = {}, {}
    for c in np.unique(clustering.labels):
        idx = np.flatnonzero(clustering.labels == c)
        distances[int(c)] = intracluster_distance(lat[idx])
        sizes[int(c)] = int(idx.size)
    eligible = [c for c in distances if sizes[c] >= 2]
    if not eligible:
        raise StabilityError(
            "every cluster is a singleton",
            {"costs": list(map(float, costs)), "retained": retained.tolist(),
             "latencies": lat.tolist(), "labels": clustering.labels.tolist()},
        )
    # ties broken by larger cluster, then lower label
    selected = min(eligible, key=lambda c: (distances[c], -sizes[c], c))
    members = retained[clustering.labels == selected]
    member_params = [solutions[i].variables.hrf_params() for i in members]
    first = solutions[members[0]].sampled_hrfs[0]
    means = mean_hrf(member_params, first.dt, first.length)
    return ClusterReport(retained, clustering.labels, clustering.merges, distances, sizes,
                         selected, members, member_params, means)
