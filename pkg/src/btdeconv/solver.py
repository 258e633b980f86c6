"""Structured block-term decomposition of a lagged autocorrelation tensor.

The model tensor is a sum of two block terms, one per source::

    R(tau) = H_T C_T(tau) H_T^T + H_A C_A(tau) H_A^T

with ``H_T`` holding gamma HRFs and ``H_A`` holding scaled impulses. Every
``(m, m')`` block of every slice is Toeplitz in ``k = tau + i - j``, so the
whole model is carried by ``M**2`` lag sequences

    f_mm'(k) = sum_d rho_mm'(d) c_T(k - d) + a_m a_m' c_A(k),
    rho_mm'(d) = sum_l h_m(l) h_m'(l + d).

Grouping the target entries by ``k`` turns the Frobenius cost into

    J = sum_k w(k) (mean_k - f(k))**2 + within-group scatter,

which is exact and never forms a slice. The free variables are optimized in
unconstrained coordinates ``theta2 = 1 + exp(u)``, ``theta3 = exp(v)``.

Gauge: ``c_T(0) = c_A(0) = 1``; per-region amplitudes live in ``theta1`` and
the artifact gains.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from .exceptions import DimensionError, DivergenceError, PipelineError
from .hrf import HrfParams, MixingModel, SampledFilter, check_identifiable, gamma_hrf, gamma_hrf_jacobian
from .lagcorr import LagCorrTensor, SourceCorrSequence, max_corr_lag
from .simulator import PL_RANGE, as_generator, sample_random_hrf_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BtdDims:
    """Sizes shared by the target tensor and the model."""

    m_regions: int
    filter_order: int
    stack_depth: int
    n_lags: int
    dt: float = 0.25

    def __post_init__(self):
        check_identifiable(self.m_regions, self.filter_order, self.stack_depth)
        if self.n_lags < 1:
            raise DimensionError("need at least one lag")

    @classmethod
    def from_target(cls, target: LagCorrTensor, filter_order: int, dt: float = 0.25) -> "BtdDims":
        return cls(target.m_regions, filter_order, target.stack_depth, target.n_lags, dt)

    @property
    def filter_length(self) -> int:
        return self.filter_order + 1

    @property
    def corr_size(self) -> int:
        """Stored one-sided correlation length ``0..K + L + L' - 1``."""
        return max_corr_lag(self.filter_order, self.stack_depth, self.n_lags) + 1

    @property
    def lags(self) -> NDArray:
        """Block lags ``k = tau + i - j`` spanned by the tensor."""
        return np.arange(-(self.stack_depth - 1), self.n_lags + self.stack_depth - 1)

    @property
    def n_free(self) -> int:
        return 4 * self.m_regions + 2 * (self.corr_size - 1)


@dataclass(frozen=True)
class SolverConfig:
    """Quasi-Newton settings for one or many BTD runs.

    ``cost_tolerance`` is the relative cost-decrease stopping threshold and
    ``gradient_tolerance`` bounds the largest gradient entry of the cost
    normalized by ``||target||_F**2``.
    """

    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    cost_tolerance: float = 1e-12
    n_starts: int = 20
    seed: int = 0
    memory: int = 10
    filter_length: int = 41
    dt: float = 0.25

    def __post_init__(self):
        if not (self.gradient_tolerance > 0 and self.cost_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def dims_for(self, target: LagCorrTensor) -> BtdDims:
        return BtdDims.from_target(target, self.filter_length - 1, self.dt)


@dataclass
class BtdVariables:
    """Natural-coordinate variables of one decomposition."""

    theta1: NDArray
    theta2: NDArray
    theta3: NDArray
    gains: NDArray
    task_corr: NDArray
    artifact_corr: NDArray

    def __post_init__(self):
        for name in ("theta1", "theta2", "theta3", "gains", "task_corr", "artifact_corr"):
            setattr(self, name, np.array(getattr(self, name), dtype=float).ravel())
        if np.any(self.theta2 <= 1) or np.any(self.theta3 <= 0):
            raise DimensionError("theta2 must exceed 1 and theta3 must be positive")

    @property
    def m_regions(self) -> int:
        return self.theta2.size

    def pack(self) -> NDArray:
        """Free variables in optimizer coordinates (``c(0)`` entries are fixed)."""
        return np.concatenate([
            self.theta1,
            np.log(self.theta2 - 1.0),
            np.log(self.theta3),
            self.gains,
            self.task_corr[1:],
            self.artifact_corr[1:],
        ])

    @classmethod
    def unpack(cls, x: NDArray, dims: BtdDims) -> "BtdVariables":
        m, nc = dims.m_regions, dims.corr_size - 1
        theta1, u, v, gains = (x[i * m : (i + 1) * m] for i in range(4))
        rest = x[4 * m :]
        return cls(
            theta1,
            1.0 + np.exp(u),
            np.exp(v),
            gains,
            np.concatenate([[1.0], rest[:nc]]),
            np.concatenate([[1.0], rest[nc : 2 * nc]]),
        )

    def hrf_params(self) -> list[HrfParams]:
        return [HrfParams(a, b, c) for a, b, c in zip(self.theta1, self.theta2, self.theta3)]

    def peak_latencies(self) -> NDArray:
        return (self.theta2 - 1.0) / self.theta3

    def sampled_hrfs(self, dims: BtdDims) -> list[SampledFilter]:
        return [gamma_hrf(p, dims.dt, dims.filter_length) for p in self.hrf_params()]

    def mixing_model(self, dims: BtdDims) -> MixingModel:
        return MixingModel(tuple(self.sampled_hrfs(dims)), self.gains, dims.stack_depth)

    def canonical(self) -> "BtdVariables":
        """Flip the global sign of each block term so amplitudes are mostly positive."""
        s1 = -1.0 if self.theta1.sum() < 0 else 1.0
        s2 = -1.0 if self.gains.sum() < 0 else 1.0
        return BtdVariables(s1 * self.theta1, self.theta2, self.theta3, s2 * self.gains,
                            self.task_corr, self.artifact_corr)

    def to_dict(self) -> dict:
        return {
            "theta1": self.theta1.tolist(),
            "theta2": self.theta2.tolist(),
            "theta3": self.theta3.tolist(),
            "gains": self.gains.tolist(),
            "task_corr": self.task_corr.tolist(),
            "artifact_corr": self.artifact_corr.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BtdVariables":
        return cls(*(d[k] for k in ("theta1", "theta2", "theta3", "gains", "task_corr", "artifact_corr")))


@dataclass
class BtdSolution:
    """Outcome of one quasi-Newton run."""

    variables: BtdVariables
    final_cost: float
    iterations: int
    converged: bool
    sampled_hrfs: list = field(repr=False)
    seed: int | None = None

    @property
    def peak_latencies(self) -> NDArray:
        return self.variables.peak_latencies()

    def to_dict(self) -> dict:
        return {
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "seed": self.seed,
            "peak_latencies": self.peak_latencies.tolist(),
            "variables": self.variables.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, dims: BtdDims) -> "BtdSolution":
        v = BtdVariables.from_dict(d["variables"])
        return cls(v, float(d["final_cost"]), int(d["iterations"]), bool(d["converged"]),
                   v.sampled_hrfs(dims), d.get("seed"))


class _Objective:
    """Cost and gradient of the structured fit against one fixed target."""

    def __init__(self, target: LagCorrTensor, dims: BtdDims):
        if target.m_regions != dims.m_regions or target.stack_depth != dims.stack_depth:
            raise DimensionError("target tensor does not match dims")
        if target.n_lags != dims.n_lags:
            raise DimensionError("target lag count does not match dims")
        self.dims = dims
        m, d, k1, order = dims.m_regions, dims.stack_depth, dims.n_lags, dims.filter_order
        tau = np.arange(k1)[:, None, None]
        i = np.arange(d)[None, :, None]
        j = np.arange(d)[None, None, :]
        kidx = (tau + i - j + d - 1).ravel()
        nk = dims.lags.size
        self.weights = np.bincount(kidx, minlength=nk).astype(float)
        blocks = target.slices.reshape(k1, m, d, m, d).transpose(1, 3, 0, 2, 4).reshape(m * m, -1)
        self.means = np.empty((m * m, nk))
        scatter = 0.0
        for p in range(m * m):
            self.means[p] = np.bincount(kidx, weights=blocks[p], minlength=nk) / self.weights
            scatter += float(np.sum((blocks[p] - self.means[p][kidx]) ** 2))
        self.scatter = scatter
        self.total = target.frobenius_sq()

        lags = dims.lags
        shifts = np.arange(-order, order + 1)
        self.cidx = np.abs(lags[:, None] - shifts[None, :])
        self.aidx = np.abs(lags)
        didx = np.arange(2 * order + 1)[:, None]
        q = np.arange(order + 1)[None, :]
        self.fwd_idx = q + didx            # h_n(l + d) in the padded kernel
        self.bwd_idx = q - didx + 2 * order  # h_m(q - d) in the padded kernel

    def block_sequences(self, var: BtdVariables):
        """Model lag sequences ``f`` of shape ``(M*M, n_k)`` and the pieces needed for gradients."""
        dims = self.dims
        m, order = dims.m_regions, dims.filter_order
        jac = [gamma_hrf_jacobian(var.theta1[r], var.theta2[r], var.theta3[r], dims.dt, dims.filter_length)
               for r in range(m)]
        h = np.array([j[0] for j in jac])
        hp = np.pad(h, ((0, 0), (order, order)))
        shifted = hp[:, self.fwd_idx]
        rho = np.einsum("ml,ndl->mnd", h, shifted).reshape(m * m, -1)
        cmat = var.task_corr[self.cidx]
        a_corr = var.artifact_corr[self.aidx]
        f = rho @ cmat.T + np.outer(var.gains, var.gains).reshape(-1, 1) * a_corr[None, :]
        return f, (jac, h, hp, shifted, rho, cmat, a_corr)

    def cost(self, var: BtdVariables) -> float:
        f, _ = self.block_sequences(var)
        return float(np.sum(self.weights * (self.means - f) ** 2) + self.scatter)

    def cost_and_grad(self, var: BtdVariables):
        dims = self.dims
        m, nc = dims.m_regions, dims.corr_size
        f, (jac, h, hp, shifted, rho, cmat, a_corr) = self.block_sequences(var)
        resid = self.means - f
        cost = float(np.sum(self.weights * resid**2) + self.scatter)
        g = -2.0 * self.weights * resid

        d_rho = (g @ cmat).reshape(m, m, -1)
        d_cmat = g.T @ rho
        grad_task = np.bincount(self.cidx.ravel(), weights=d_cmat.ravel(), minlength=nc)

        d_h = np.einsum("mnd,ndl->ml", d_rho, shifted)
        d_h += np.einsum("mnd,mdq->nq", d_rho, hp[:, self.bwd_idx])

        g3 = g.reshape(m, m, -1)
        gc = g3 @ a_corr
        grad_gains = (gc + gc.T) @ var.gains
        gk = np.einsum("m,n,mnk->k", var.gains, var.gains, g3)
        grad_art = np.bincount(self.aidx, weights=gk, minlength=nc)

        d1 = np.array([np.dot(d_h[r], jac[r][1]) for r in range(m)])
        d2 = np.array([np.dot(d_h[r], jac[r][2]) for r in range(m)])
        d3 = np.array([np.dot(d_h[r], jac[r][3]) for r in range(m)])
        grad = np.concatenate([
            d1,
            d2 * (var.theta2 - 1.0),
            d3 * var.theta3,
            grad_gains,
            grad_task[1:],
            grad_art[1:],
        ])
        return cost, grad


def _check_sizes(var: BtdVariables, dims: BtdDims):
    if var.m_regions != dims.m_regions:
        raise DimensionError(f"{var.m_regions} regions in variables, {dims.m_regions} in dims")
    for name in ("task_corr", "artifact_corr"):
        if getattr(var, name).size != dims.corr_size:
            raise DimensionError(f"{name} must hold {dims.corr_size} lags")


def btd_cost(var: BtdVariables, target: LagCorrTensor, dims: BtdDims) -> float:
    """Squared Frobenius distance between ``target`` and the structured model."""
    _check_sizes(var, dims)
    return _Objective(target, dims).cost(var)


def btd_gradient(var: BtdVariables, target: LagCorrTensor, dims: BtdDims) -> NDArray:
    """Analytic gradient of :func:`btd_cost` with respect to ``var.pack()``."""
    _check_sizes(var, dims)
    return _Objective(target, dims).cost_and_grad(var)[1]


def model_tensor_from_variables(var: BtdVariables, dims: BtdDims) -> LagCorrTensor:
    """Explicit ``H C H^T`` tensor for a set of variables (slow path)."""
    from .lagcorr import model_tensor

    return model_tensor(var.mixing_model(dims), SourceCorrSequence(var.task_corr),
                        SourceCorrSequence(var.artifact_corr), dims.n_lags)


def random_init(target: LagCorrTensor, dims: BtdDims, rng=None) -> BtdVariables:
    """Draw a starting point inside the physically plausible set.

    HRF shapes come from the (PL, FWHM) sampler with PL capped at the filter
    duration, gains from U[0.1, 1], the task correlation from the observed
    autocorrelation of the region-average signal and the artifact correlation
    from a unit impulse. Amplitudes are scaled so the task term explains half
    of each region's lag-0 power.
    """
    rng = as_generator(rng)
    m = dims.m_regions
    # keep the initial peak inside the filter window, else the amplitude rescale below explodes
    window = dims.filter_order * dims.dt
    pl_range = (min(PL_RANGE[0], 0.5 * window), min(PL_RANGE[1], window))
    params = [sample_random_hrf_params(rng, pl_range=pl_range) for _ in range(m)]
    gains = rng.uniform(0.1, 1.0, size=m)

    obj = _Objective(target, dims)
    lags = dims.lags
    mean_acf = obj.means.mean(axis=0)
    zero = int(np.flatnonzero(lags == 0)[0])
    task_corr = np.zeros(dims.corr_size)
    pos = mean_acf[zero:]
    if abs(pos[0]) > 0:
        task_corr[: pos.size] = pos / pos[0]
    else:
        task_corr[0] = 1.0
    artifact_corr = np.zeros(dims.corr_size)
    artifact_corr[0] = 1.0

    unit = BtdVariables(np.ones(m), [p.theta2 for p in params], [p.theta3 for p in params],
                        np.zeros(m), task_corr, artifact_corr)
    f, _ = obj.block_sequences(unit)
    diag = f.reshape(m, m, -1)[np.arange(m), np.arange(m), zero]
    observed = obj.means.reshape(m, m, -1)[np.arange(m), np.arange(m), zero]
    theta1 = np.where(diag > 0, np.sqrt(np.abs(0.5 * observed) / np.where(diag > 0, diag, 1.0)), 1.0)
    return BtdVariables(theta1, unit.theta2, unit.theta3, gains, task_corr, artifact_corr)


class _NonFinite(Exception):
    pass


def solve_single(
    target: LagCorrTensor,
    config: SolverConfig,
    init: BtdVariables,
    dims: BtdDims | None = None,
    seed: int | None = None,
) -> BtdSolution:
    """Run L-BFGS from ``init`` until a tolerance or the iteration cap is hit.

    Raises
    ------
    DivergenceError
        If the cost becomes non-finite.
    """
    dims = dims or config.dims_for(target)
    _check_sizes(init, dims)
    obj = _Objective(target, dims)
    scale = obj.total if obj.total > 0 else 1.0

    def fun(x):
        with np.errstate(over="ignore", invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                var = BtdVariables.unpack(x, dims)
            except DimensionError as exc:
                raise _NonFinite(str(exc)) from exc
            cost, grad = obj.cost_and_grad(var)
        if not (np.isfinite(cost) and np.all(np.isfinite(grad))):
            raise _NonFinite(f"cost={cost}")
        return cost / scale, grad / scale

    try:
        res = minimize(
            fun,
            init.pack(),
            jac=True,
            method="L-BFGS-B",
            options={
                "maxiter": config.max_iterations,
                "maxcor": config.memory,
                "gtol": config.gradient_tolerance,
                "ftol": config.cost_tolerance,
                "maxls": 40,
            },
        )
    except _NonFinite as exc:
        raise DivergenceError(f"non-finite cost during iteration: {exc}") from exc
    if not np.isfinite(res.fun):
        raise DivergenceError("non-finite final cost")
    var = BtdVariables.unpack(res.x, dims).canonical()
    return BtdSolution(var, float(res.fun * scale), int(res.nit), bool(res.success),
                       var.sampled_hrfs(dims), seed)


def multi_start(target: LagCorrTensor, config: SolverConfig, dims: BtdDims | None = None) -> list[BtdSolution]:
    """``config.n_starts`` independent runs from random initializations.

    Per-run seeds are spawned from ``config.seed``. Diverged runs are replaced
    by fresh draws, at most ``n_starts`` times in total.

    Raises
    ------
    PipelineError
        If every run diverged.
    """
    dims = dims or config.dims_for(target)
    n = config.n_starts
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(2 * n)]
    solutions, spare = [], iter(seeds[n:])
    for seed in seeds[:n]:
        while True:
            try:
                init = random_init(target, dims, seed)
                solutions.append(solve_single(target, config, init, dims, seed))
                break
            except DivergenceError as exc:
                logger.warning("run with seed %d diverged: %s", seed, exc)
                seed = next(spare, None)
                if seed is None:
                    break
    if not solutions:
        raise PipelineError("all BTD runs diverged", stage="decompose")
    return solutions
