import numpy as np
import pytest

from btdeconv.hrf import HrfParams, params_from_pl_fwhm
from btdeconv.lagcorr import SourceCorrSequence, model_tensor
from btdeconv.solver import BtdDims, BtdVariables


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dims():
    # M L' = 3 * 8 = 24 >= 2 (L + L') = 2 * 12
    return BtdDims(m_regions=3, filter_order=4, stack_depth=8, n_lags=5, dt=0.5)


def planted_variables(dims: BtdDims, rng=None) -> BtdVariables:
    """Plausible ground-truth variables for a model-built target."""
    rng = np.random.default_rng(7) if rng is None else rng
    pls = np.linspace(0.8, 2.0, dims.m_regions)
    params = [params_from_pl_fwhm(pl, 1.2 + 0.3 * k) for k, pl in enumerate(pls)]
    k = np.arange(dims.corr_size)
    task = np.exp(-k / 3.0) * np.cos(k / 4.0)
    art = np.zeros(dims.corr_size)
    art[0] = 1.0
    return BtdVariables(
        theta1=[0.9, 1.1, 1.3][: dims.m_regions] if dims.m_regions <= 3 else 1.0 + 0.1 * np.arange(dims.m_regions),
        theta2=[p.theta2 for p in params],
        theta3=[p.theta3 for p in params],
        gains=rng.uniform(0.3, 0.8, dims.m_regions),
        task_corr=task,
        artifact_corr=art,
    )


def planted_target(dims: BtdDims, var: BtdVariables):
    return model_tensor(var.mixing_model(dims), SourceCorrSequence(var.task_corr),
                        SourceCorrSequence(var.artifact_corr), dims.n_lags)


@pytest.fixture(scope="session")
def planted(small_dims):
    var = planted_variables(small_dims)
    return var, planted_target(small_dims, var)


def sample_acf(x, n):
    """Normalized unbiased autocorrelation of ``x`` at lags ``0..n-1``."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    c = np.array([x[: x.size - k] @ x[k:] / (x.size - k) for k in range(n)])
    return c / c[0]


@pytest.fixture(scope="session")
def protocol_planted():
    """Model-built target at protocol sizes from a simulated scenario's true variables."""
    from btdeconv.simulator import make_experiment, mixing_gains

    exp = make_experiment(1, 0.0)
    dims = BtdDims(m_regions=3, filter_order=40, stack_depth=80, n_lags=41, dt=0.25)
    var = BtdVariables(
        theta1=[1.0, 0.8, 1.2],
        theta2=[p.theta2 for p in exp.hrf_params],
        theta3=[p.theta3 for p in exp.hrf_params],
        gains=mixing_gains(exp),
        task_corr=sample_acf(exp.schedule.binary(), dims.corr_size),
        artifact_corr=sample_acf(exp.artifact.samples, dims.corr_size),
    )
    return dims, var, planted_target(dims, var)


@pytest.fixture(scope="session")
def protocol_multistart(protocol_planted):
    """Default multi-start on the protocol-size planted target, with its wall time."""
    import time

    from btdeconv.config import PipelineConfig
    from btdeconv.solver import multi_start

    dims, _, target = protocol_planted
    t0 = time.perf_counter()
    sols = multi_start(target, PipelineConfig(seed=1).solver_config(), dims)
    return sols, time.perf_counter() - t0


@pytest.fixture
def unit_gamma():
    return HrfParams(1.0, 2.0, 1.0)


ACCEPTANCE_LINES = []


def record_acceptance(name: str, passed: bool, detail: str) -> None:
    """Store one criterion verdict for the end-of-session summary."""
    line = f"{name} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
