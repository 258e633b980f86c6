import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btdeconv.exceptions import DimensionError, ParameterDomainError
from btdeconv.hrf import HrfParams, MixingModel, build_mixing_matrix, gamma_fwhm, peak_latency
from btdeconv.lagcorr import hankelize
from btdeconv.simulator import (
    FWHM_RANGE,
    PL_RANGE,
    ArtifactProcess,
    EpSchedule,
    Experiment,
    RoiTimeSeries,
    generate_artifact,
    generate_ep,
    make_experiment,
    mixing_gains,
    sample_random_hrf_params,
    simulate_artifact,
    synthesize,
    task_terms,
)


class TestGenerateEp:
    def test_protocol(self):
        ep = generate_ep(20, 4.0, (10.0, 15.0), 4.0, np.random.default_rng(1))
        x = ep.binary()
        edges = np.diff(np.r_[0, x, 0])
        starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
        assert starts.size == 20
        assert np.all(ends - starts == 16)

    def test_degenerate_rest(self):
        ep = generate_ep(1, 4.0, (10.0, 10.0), 4.0, np.random.default_rng(0))
        assert ep.onset_samples.tolist() == [40]
        assert ep.total_length == 40 + 16 + 40

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 25), seed=st.integers(0, 2**31))
    def test_total_length_bounds(self, n, seed):
        ep = generate_ep(n, 4.0, (10.0, 15.0), 4.0, np.random.default_rng(seed))
        seconds = ep.total_length / ep.fs
        assert n * 4 + (n + 1) * 10 - 1e-9 <= seconds <= n * 4 + (n + 1) * 15 + 1e-9

    def test_gaps_within_rest_range(self):
        ep = generate_ep(20, 4.0, (10.0, 15.0), 4.0, np.random.default_rng(5))
        gaps = np.diff(ep.onsets) - 4.0
        assert np.all(gaps >= 10.0 - 1e-9) and np.all(gaps <= 15.0 + 1e-9)

    def test_deterministic(self):
        a = generate_ep(5, rng=np.random.default_rng(3))
        b = generate_ep(5, rng=np.random.default_rng(3))
        assert a == b

    @pytest.mark.parametrize("kwargs", [{"n_reps": 0}, {"rest_range": (5.0, 4.0)}, {"fs": 0.0}])
    def test_preconditions(self, kwargs):
        with pytest.raises(ParameterDomainError):
            generate_ep(**kwargs)

    def test_dict_round_trip(self):
        ep = generate_ep(3, rng=np.random.default_rng(0))
        assert EpSchedule.from_dict(ep.to_dict()) == ep


class TestArtifact:
    def test_constant_when_noise_free_single_segment(self):
        x = generate_artifact(20, 4.0, (100.0, 100.0), 1.0, 0.0, np.random.default_rng(0))
        assert np.all(x == x[0])

    def test_white_noise_variance(self):
        x = generate_artifact(100_000, 4.0, (5.0, 10.0), 0.0, 1.5, np.random.default_rng(0))
        assert abs(x.mean()) < 0.05
        assert x.var() == pytest.approx(1.5**2, rel=0.05)

    def test_deterministic(self):
        a = generate_artifact(500, rng=np.random.default_rng(9))
        b = generate_artifact(500, rng=np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_piecewise_constant_mean(self):
        art = simulate_artifact(400, 4.0, (5.0, 10.0), 1.0, 0.0, np.random.default_rng(2))
        dwell = np.diff(np.append(art.change_samples, 400))
        assert np.all(dwell[:-1] >= 20) and np.all(dwell[:-1] <= 40)
        assert np.unique(art.samples).size == art.levels.size


class TestRandomHrf:
    def test_within_ranges(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = sample_random_hrf_params(rng)
            assert PL_RANGE[0] - 1e-9 <= peak_latency(p) <= PL_RANGE[1] + 1e-9
            assert FWHM_RANGE[0] - 1e-6 <= gamma_fwhm(p) <= FWHM_RANGE[1] + 1e-6

    def test_seeds_differ(self):
        a = sample_random_hrf_params(np.random.default_rng(1))
        b = sample_random_hrf_params(np.random.default_rng(2))
        assert a != b

    def test_quadrant_coverage(self):
        rng = np.random.default_rng(11)
        draws = [sample_random_hrf_params(rng) for _ in range(1000)]
        pl = np.array([peak_latency(p) for p in draws])
        w = np.array([gamma_fwhm(p) for p in draws])
        pm, wm = np.mean(PL_RANGE), np.mean(FWHM_RANGE)
        for a in (pl < pm, pl >= pm):
            for b in (w < wm, w >= wm):
                assert np.mean(a & b) >= 0.15


class TestSynthesize:
    def test_normalized_rows(self):
        y = synthesize(make_experiment(1, 0.0))
        np.testing.assert_allclose(y.data.mean(axis=1), 0, atol=1e-9)
        np.testing.assert_allclose(y.data.std(axis=1), 1, atol=1e-9)
        assert y.data.shape == (3, make_experiment(1, 0.0).schedule.total_length)

    @pytest.mark.parametrize("snr", [-10.0, -5.0, 0.0, 5.0, 10.0])
    def test_achieved_snr(self, snr):
        exp = make_experiment(4, snr)
        task = task_terms(exp)
        art = mixing_gains(exp)[:, None] * exp.artifact.samples[None, :]
        achieved = 10 * np.log10(task.var(axis=1) / art.var(axis=1))
        np.testing.assert_allclose(achieved, snr, atol=0.1)

    def test_noise_free_is_normalized_convolution(self):
        exp = make_experiment(2, math.inf)
        y = synthesize(exp)
        ep = exp.schedule.binary()
        for m, h in enumerate(exp.true_hrfs()):
            c = np.convolve(ep, h.taps)[: ep.size]
            np.testing.assert_allclose(y.data[m], (c - c.mean()) / c.std(), atol=1e-12)

    def test_matches_mixing_matrix_product(self):
        exp = make_experiment(3, math.inf, filter_length=9)
        y = synthesize(exp, normalize=False).data
        depth, order = 16, 8
        H = build_mixing_matrix(MixingModel(tuple(exp.true_hrfs()), np.zeros(3), depth))
        ep = exp.schedule.binary()
        n = np.arange(depth - 1, ep.size)
        lagged = n[None, :] - np.arange(order + depth)[:, None]
        S = np.where(lagged >= 0, ep[np.clip(lagged, 0, None)], 0.0)
        np.testing.assert_allclose(H[:, : order + depth] @ S, hankelize(y, depth).data, atol=1e-12)

    def test_deterministic(self):
        a = synthesize(make_experiment(8, 0.0)).data
        b = synthesize(make_experiment(8, 0.0)).data
        np.testing.assert_array_equal(a, b)

    def test_zero_task_variance_rejected(self):
        exp = make_experiment(0, 0.0)
        zero = Experiment(exp.schedule, (HrfParams(0.0, 2, 1),) * 3, exp.artifact, 0.0)
        with pytest.raises(DimensionError):
            synthesize(zero)

    def test_constant_region_cannot_normalize(self):
        with pytest.raises(DimensionError):
            RoiTimeSeries(np.ones((2, 10)), 4.0).normalized()

    def test_needs_two_regions(self):
        exp = make_experiment(0, 0.0)
        with pytest.raises(DimensionError):
            Experiment(exp.schedule, exp.hrf_params[:1], exp.artifact, 0.0)

    def test_artifact_length_mismatch(self):
        exp = make_experiment(0, 0.0)
        short = ArtifactProcess(np.zeros(1), np.zeros(1, dtype=int), 0.0, np.zeros(5))
        with pytest.raises(DimensionError):
            Experiment(exp.schedule, exp.hrf_params, short, 0.0)
