import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from btdeconv.exceptions import DimensionError, EstimationError
from btdeconv.hrf import MixingModel, SampledFilter
from btdeconv.lagcorr import (
    HankelStack,
    SourceCorrSequence,
    autocorr_tensor,
    core_slice,
    dehankelize,
    hankelize,
    max_corr_lag,
    model_tensor,
    unstack,
)


def delta(n):
    v = np.zeros(n)
    v[0] = 1.0
    return SourceCorrSequence(v)


class TestHankelize:
    def test_direct_indexing(self):
        np.testing.assert_array_equal(hankelize([[1, 2, 3, 4]], 2).data, [[2, 3, 4], [1, 2, 3]])

    def test_row_count(self, rng):
        assert hankelize(rng.normal(size=(2, 20)), 5).data.shape == (10, 16)

    def test_too_short(self):
        with pytest.raises(DimensionError):
            hankelize(np.ones((1, 3)), 3)

    @settings(max_examples=30, deadline=None)
    @given(y=arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(6, 40)),
                    elements=st.floats(-1e3, 1e3)), depth=st.integers(1, 5))
    def test_round_trip_exact(self, y, depth):
        np.testing.assert_array_equal(unstack(hankelize(y, depth)), y)

    def test_blocks_are_hankel(self, rng):
        x = hankelize(rng.normal(size=(3, 30)), 6).data
        for m in range(3):
            block = x[m * 6 : (m + 1) * 6]
            # entry (i, c) = y(c + L' - 1 - i) depends only on c - i
            np.testing.assert_array_equal(block[1:, 1:], block[:-1, :-1])


class TestDehankelize:
    def test_consistent_block_is_exact(self, rng):
        s = rng.normal(size=30)
        rows = 5
        block = np.stack([s[rows - 1 - i : rows - 1 - i + 26] for i in range(rows)])
        np.testing.assert_allclose(dehankelize(block), s, atol=1e-15)


class TestAutocorrTensor:
    def test_white_noise(self):
        y = np.random.default_rng(0).normal(size=(1, 100_000))
        t = autocorr_tensor(hankelize(y, 1), 2)
        assert t.slices[0, 0, 0] == pytest.approx(1.0, abs=0.05)
        assert t.slices[1, 0, 0] == pytest.approx(0.0, abs=0.05)

    def test_zero_input(self):
        t = autocorr_tensor(hankelize(np.zeros((2, 50)), 4), 3)
        assert not np.any(t.slices)

    def test_lag_zero_symmetric(self, rng):
        t = autocorr_tensor(hankelize(rng.normal(size=(3, 200)), 8), 5)
        assert np.array_equal(t.slices[0], t.slices[0].T)

    def test_too_few_columns(self):
        with pytest.raises(EstimationError):
            autocorr_tensor(hankelize(np.ones((1, 10)), 5), 6)

    def test_unbiased_definition(self, rng):
        y = rng.normal(size=(2, 40))
        stack = hankelize(y, 3)
        t = autocorr_tensor(stack, 4)
        x = stack.data
        nv = x.shape[1]
        for tau in range(1, 4):
            expected = sum(np.outer(x[:, n], x[:, n + tau]) for n in range(nv - tau)) / (nv - tau)
            np.testing.assert_allclose(t.slices[tau], expected, atol=1e-12)


class TestCoreSlice:
    def test_shift_property(self, rng):
        c = SourceCorrSequence(rng.normal(size=30))
        for tau in range(5):
            block = core_slice(c, 10, tau)
            i, j = np.indices(block.shape)
            np.testing.assert_array_equal(block, c.values[np.abs(tau + i - j)])


class TestModelTensor:
    def model(self, rng, gains=None, depth=8):
        hs = tuple(SampledFilter(rng.normal(size=5), 0.5) for _ in range(3))
        return MixingModel(hs, rng.uniform(0.2, 1, 3) if gains is None else gains, depth)

    def test_impulse_white(self):
        h = SampledFilter([1.0, 0.0], 1.0)
        model = MixingModel((h, h, h), np.zeros(3), 2)
        n = max_corr_lag(1, 2, 1) + 1
        t = model_tensor(model, delta(n), delta(n), 1)
        np.testing.assert_array_equal(t.slices[0], np.tile(np.eye(2), (3, 3)))

    def test_swap_terms(self, rng):
        hs = tuple(SampledFilter(rng.normal(size=5), 0.5) for _ in range(3))
        n = max_corr_lag(4, 8, 3) + 1
        a = SourceCorrSequence(np.exp(-np.arange(n) / 2.0))
        b = SourceCorrSequence(np.exp(-np.arange(n) / 5.0))
        t1 = model_tensor(MixingModel(hs, np.zeros(3), 8), a, delta(n), 3).slices
        t2 = model_tensor(MixingModel(hs, np.zeros(3), 8), b, delta(n), 3).slices
        t12 = model_tensor(MixingModel(hs, np.zeros(3), 8), SourceCorrSequence(a.values + b.values),
                           delta(n), 3).slices
        np.testing.assert_allclose(t12, t1 + t2, atol=1e-12)

    def test_bilinear_in_correlations(self, rng):
        model = self.model(rng)
        n = max_corr_lag(4, 8, 3) + 1
        a = SourceCorrSequence(rng.normal(size=n))
        b = SourceCorrSequence(rng.normal(size=n))
        base = model_tensor(model, a, b, 3).slices
        doubled = model_tensor(model, SourceCorrSequence(2 * a.values), SourceCorrSequence(2 * b.values), 3).slices
        np.testing.assert_allclose(doubled, 2 * base, atol=1e-12)

    def test_needs_enough_lags(self, rng):
        with pytest.raises(DimensionError):
            model_tensor(self.model(rng), delta(5), delta(5), 3)

    def test_matches_long_sample(self):
        rng = np.random.default_rng(3)
        model = self.model(rng)
        n_samples = 100_000
        s_t, s_a = rng.normal(size=(2, n_samples))
        y = np.stack([np.convolve(s_t, h.taps)[:n_samples] + a * s_a
                      for h, a in zip(model.task_filters, model.artifact_gains)])
        sample = autocorr_tensor(hankelize(y, 8), 3).slices
        n = max_corr_lag(4, 8, 3) + 1
        pop = model_tensor(model, delta(n), delta(n), 3).slices
        assert np.linalg.norm(sample - pop) / np.linalg.norm(pop) < 0.02

    def test_max_lag(self):
        assert max_corr_lag(40, 80, 41) == 40 + 40 + 80 - 1
