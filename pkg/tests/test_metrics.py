import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btdeconv.exceptions import DimensionError, EstimationError, ThresholdError
from btdeconv.hrf import HrfParams, SampledFilter, gamma_hrf, params_from_pl_fwhm
from btdeconv.metrics import (
    BinarySchedule,
    EvalReport,
    averaged_response,
    binarize_global,
    fano_factor,
    fano_from_peaks,
    fwhm_error,
    iou_seconds,
    pl_error,
    reconstruct_ep_from_peaks,
)

FS = 4.0


def square_wave(onsets, duration, n, fs=FS):
    x = np.zeros(n)
    for o in onsets:
        x[int(round(o * fs)) : int(round((o + duration) * fs))] = 1.0
    return x


def pulse_train(heights, fs=FS, gap=20.0, width=4.0):
    n = int((gap * (len(heights) + 1)) * fs)
    x = np.zeros(n)
    for k, h in enumerate(heights):
        start = int((gap * (k + 1) - width / 2) * fs)
        x[start : start + int(width * fs)] = h
    return x


class TestBinarySchedule:
    def test_rejects_overlap(self):
        with pytest.raises(ValueError):
            BinarySchedule(((0, 2), (1, 3)))

    def test_rejects_empty_interval(self):
        with pytest.raises(ValueError):
            BinarySchedule(((1, 1),))

    def test_from_mask(self):
        s = BinarySchedule.from_mask([0, 1, 1, 0, 1], 2.0)
        assert s.intervals == ((0.5, 1.5), (2.0, 2.5))


class TestBinarize:
    def test_clean_square_wave(self):
        x = square_wave([10, 30, 50], 4, 300)
        assert binarize_global(x, FS).intervals == ((10, 14), (30, 34), (50, 54))

    def test_noisy_square_wave(self):
        x = square_wave([10, 30, 50], 4, 300) + np.random.default_rng(0).normal(0, 0.05, 300)
        est = binarize_global(x, FS)
        assert len(est) == 3
        for (a, b), (c, d) in zip(est.intervals, ((10, 14), (30, 34), (50, 54))):
            assert abs(a - c) <= 1 / FS and abs(b - d) <= 1 / FS

    def test_constant(self):
        with pytest.raises(ThresholdError):
            binarize_global(np.ones(10), FS)


class TestIou:
    def test_worked_example(self):
        r = iou_seconds(BinarySchedule(((3, 7),)), BinarySchedule(((3.4, 7.5),)), 4.0)
        assert r.mean == pytest.approx(3.2, abs=1e-12)

    def test_identical(self):
        s = BinarySchedule.from_onsets([10, 30, 50], 4.0)
        r = iou_seconds(s, s)
        assert r.per_repetition == [4.0] * 3 and r.false_positives == 0

    def test_disjoint(self):
        r = iou_seconds(BinarySchedule(((0, 4),)), BinarySchedule(((10, 14),)))
        assert r.mean == 0.0 and r.false_positives == 1

    def test_false_positive_does_not_reduce_iou(self):
        truth = BinarySchedule(((0, 4),))
        r = iou_seconds(truth, BinarySchedule(((0, 4), (20, 22))))
        assert r.mean == 4.0 and r.false_positives == 1

    def test_empty_truth(self):
        with pytest.raises(ValueError):
            iou_seconds(BinarySchedule(), BinarySchedule(((0, 1),)))

    @settings(max_examples=60, deadline=None)
    @given(a=st.floats(0, 10), w1=st.floats(0.1, 5), shift=st.floats(-3, 3), w2=st.floats(0.1, 5))
    def test_bounded_and_symmetric(self, a, w1, shift, w2):
        s1 = BinarySchedule(((a, a + w1),))
        s2 = BinarySchedule(((a + shift, a + shift + w2),))
        r12, r21 = iou_seconds(s1, s2).mean, iou_seconds(s2, s1).mean
        assert 0.0 <= r12 <= 4.0 + 1e-12
        assert r12 == pytest.approx(r21, abs=1e-12)


class TestLatencyErrors:
    def hrfs(self, pls):
        return [gamma_hrf(params_from_pl_fwhm(pl, 2.0), 0.01, 1001) for pl in pls]

    def test_identical(self):
        h = self.hrfs([1, 2, 3])
        assert pl_error(h, h)[1] == 0.0
        assert fwhm_error(h, h)[1] == 0.0

    def test_arithmetic(self):
        per, mean = pl_error(self.hrfs([1, 2, 3]), self.hrfs([1.5, 2, 3]))
        # latencies are read off a 10 ms grid with sub-sample interpolation
        np.testing.assert_allclose(per, [0.5, 0, 0], atol=1e-3)
        assert mean == pytest.approx(1 / 6, abs=1e-3)

    def test_count_mismatch(self):
        with pytest.raises(DimensionError):
            pl_error(self.hrfs([1, 2]), self.hrfs([1, 2, 3]))


class TestPeakReconstruction:
    def test_amplitude_varying_train(self):
        x = pulse_train([1.0, 0.4, 0.9])
        truth = BinarySchedule.from_onsets([18, 38, 58], 4.0)
        peaks = reconstruct_ep_from_peaks(x, FS)
        glob = binarize_global(x, FS, threshold=0.5)
        found = lambda s: sum(v > 0 for v in iou_seconds(truth, s).per_repetition)
        assert found(peaks) == 3
        assert found(glob) == 2

    def test_flat(self):
        assert len(reconstruct_ep_from_peaks(np.zeros(200), FS)) == 0

    def test_single_pulse(self):
        x = pulse_train([1.0])
        est = reconstruct_ep_from_peaks(x, FS)
        assert len(est) == 1
        (a, b), = est.intervals
        assert abs(a - 18) <= 1 / FS and abs(b - 22) <= 1 / FS

    def test_too_short(self):
        with pytest.raises(DimensionError):
            reconstruct_ep_from_peaks(np.ones(10), FS)


class TestFano:
    def test_constant_peaks(self):
        assert fano_from_peaks([2, 2, 2]) == 0.0

    def test_hand_value(self):
        assert fano_from_peaks([1, 2, 3]) == pytest.approx(0.5)

    def test_scaling(self):
        p = np.array([1.0, 2.5, 4.0])
        assert fano_from_peaks(3 * p) == pytest.approx(3 * fano_from_peaks(p))

    def test_from_series(self):
        ep = BinarySchedule.from_onsets([10, 30, 50], 4.0)
        x = np.zeros(300)
        for o, h in zip(ep.onsets, (1, 2, 3)):
            x[int(o * FS) + 8] = h
        assert fano_factor(x, ep, 10.0, FS)[0] == pytest.approx(0.5)

    def test_non_positive_mean(self):
        with pytest.raises(EstimationError):
            fano_from_peaks([-1, -2])

    def test_window_past_end(self):
        with pytest.raises(EstimationError):
            fano_factor(np.ones(100), BinarySchedule.from_onsets([20.0], 4.0), 10.0, FS)


class TestAveragedResponse:
    def test_identical_repetitions(self):
        ep = BinarySchedule.from_onsets([10, 30, 50], 4.0)
        shape = np.sin(np.linspace(0, np.pi, 41))
        x = np.zeros(300)
        for o in ep.onsets:
            x[int(o * FS) : int(o * FS) + 41] = shape
        np.testing.assert_allclose(averaged_response(x, ep, 10.0, FS)[0], shape)

    def test_noise_averages_out(self):
        rng = np.random.default_rng(0)
        onsets = 20.0 * np.arange(1, 101)
        ep = BinarySchedule.from_onsets(onsets, 4.0)
        shape = np.sin(np.linspace(0, np.pi, 41))
        sigma = 0.5
        x = rng.normal(0, sigma, int(20 * 102 * FS))
        for o in onsets:
            x[int(o * FS) : int(o * FS) + 41] += shape
        avg = averaged_response(x, ep, 10.0, FS)[0]
        assert np.all(np.abs(avg - shape) <= 3 * sigma / np.sqrt(100))

    def test_latency_ordering(self):
        dt = 1 / FS
        hrfs = [gamma_hrf(params_from_pl_fwhm(pl, 1.5), dt, 41) for pl in (1.0, 1.75, 2.0)]
        onsets = [10.0, 40.0, 70.0]
        ep = BinarySchedule.from_onsets(onsets, 0.25)
        n = 400
        x = np.zeros((3, n))
        for r, h in enumerate(hrfs):
            for o in onsets:
                i = int(o * FS)
                x[r, i : i + 41] += h.taps
        peaks = averaged_response(x, ep, 10.0, FS).argmax(axis=1)
        assert peaks[0] < peaks[1] < peaks[2]


class TestEvalReport:
    def test_flat_row(self):
        r = EvalReport(3.1, [3.1], 0, [0.1, 0.2], 0.15, [0.3], 0.3, [], {"seed": 4, "snr_db": 0.0})
        row = r.flat_row()
        assert row["seed"] == 4 and row["pl_error_2"] == 0.2 and row["iou_seconds_mean"] == 3.1
