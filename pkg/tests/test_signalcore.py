import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from painprof.dataset.synth import periodic_ecg
from painprof.errors import InputError, OutOfRangeError
from painprof.signalcore import (
    IBI_FEATURE_NAMES, PHYSIO_FEATURE_NAMES, SC_FEATURE_NAMES, IbiSeries, IrfParams,
    convolve_driver, deconvolve_sc, detect_r_peaks, ibi_features, ibi_window_features,
    sc_window_features,
)
from painprof.signalcore.eda import ScDecomposition

FS = 32.0
IRF = IrfParams()


def scr_train(onsets, amplitudes, duration, fs=FS, tonic=1.0):
    """SC from impulses whose reconvolved responses peak at ``amplitudes`` µS."""
    n = int(duration * fs)
    driver = np.zeros(n)
    for t, a in zip(onsets, amplitudes):
        driver[int(round(t * fs))] += a / IRF.peak() * fs
    return tonic + convolve_driver(driver, fs, IRF), driver


def match_peaks(detected, truth, tol=0.010):
    """Greedy one-to-one matching; returns (true positives, detections)."""
    used = np.zeros(detected.size, dtype=bool)
    tp = 0
    for t in truth:
        if detected.size == 0:
            break
        j = int(np.argmin(np.abs(detected - t)))
        if not used[j] and abs(detected[j] - t) <= tol:
            used[j] = True
            tp += 1
    return tp, detected.size


class TestIrf:
    def test_kernel_vanishes_before_zero(self):
        assert IRF.kernel(-1.0) == 0.0
        assert IRF.kernel(0.0) == 0.0

    def test_peak_is_kernel_maximum(self):
        t = np.linspace(0, 20, 200001)
        assert IRF.peak() == pytest.approx(IRF.kernel(t).max(), rel=1e-9)

    def test_invalid_time_constants(self):
        with pytest.raises(InputError):
            IrfParams(2.0, 0.75)

    def test_convolution_matches_direct_sum(self):
        rng = np.random.default_rng(3)
        n = 200
        d = np.where(rng.random(n) < 0.05, rng.uniform(0, 5, n), 0.0)
        t = np.arange(n) / FS
        direct = np.array([sum(d[k] / FS * IRF.kernel(t[i] - t[k]) for k in range(n)) for i in range(n)])
        np.testing.assert_allclose(convolve_driver(d, FS, IRF), direct, atol=1e-12)


class TestDeconvolution:
    def test_zero_signal(self):
        r = deconvolve_sc(np.zeros(int(20 * FS)), FS)
        assert np.all(r.driver == 0)
        assert r.scr_onsets.size == 0

    def test_constant_signal(self):
        r = deconvolve_sc(np.full(int(20 * FS), 2.0), FS)
        np.testing.assert_allclose(r.tonic, 2.0, atol=1e-9)
        assert np.abs(r.driver).max() <= 1e-9

    def test_single_impulse(self):
        sc, driver = scr_train([5.0], [0.3], 30.0)
        r = deconvolve_sc(sc, FS)
        assert abs(int(np.argmax(r.driver)) - int(5.0 * FS)) <= 1
        assert np.corrcoef(r.driver, driver)[0, 1] >= 0.95

    def test_two_scrs(self):
        sc, _ = scr_train([5.0, 15.0], [0.2, 0.3], 40.0)
        r = deconvolve_sc(sc, FS)
        feats = sc_window_features(r, 0.0, 39.0)
        assert feats[0] == 2
        assert feats[1] == pytest.approx(0.5, abs=0.02)
        np.testing.assert_allclose(r.scr_amplitudes, [0.2, 0.3], atol=0.02)

    def test_resamples_high_rate_input(self):
        fs = 256.0
        sc, _ = scr_train([5.0], [0.3], 20.0, fs=fs)
        r = deconvolve_sc(sc, fs)
        assert r.fs == pytest.approx(32.0)
        assert r.scr_onsets.size == 1

    def test_too_short(self):
        with pytest.raises(InputError):
            deconvolve_sc(np.zeros(int(5 * FS)), FS)

    def test_non_finite(self):
        x = np.zeros(int(20 * FS))
        x[3] = np.nan
        with pytest.raises(InputError):
            deconvolve_sc(x, FS)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_driver_nonnegative_and_reconstructs(self, seed):
        rng = np.random.default_rng(seed)
        onsets = np.sort(rng.choice(np.arange(2, 50, 3.0), 4, replace=False))
        sc, _ = scr_train(onsets, rng.uniform(0.05, 0.8, 4), 60.0, tonic=rng.uniform(1, 10))
        r = deconvolve_sc(sc, FS)
        assert np.all(r.driver >= 0)
        assert r.residual_rms <= 0.01 * np.sqrt(np.mean(sc**2))


def flat_decomposition(value, duration=20.0, fs=FS):
    n = int(duration * fs)
    t = np.arange(n) / fs
    return ScDecomposition(t, fs, np.zeros(n), np.full(n, 1.5), np.zeros(n), np.full(n, value),
                           np.empty(0), np.empty(0), IRF, 0.0)


class TestScWindowFeatures:
    def test_constant_driver(self):
        f = sc_window_features(flat_decomposition(0.5), 2.0, 6.0)
        assert f[2] == pytest.approx(0.5)
        assert f[3] == pytest.approx(0.5)
        assert f[4] == pytest.approx(3.0)
        assert f[5] == pytest.approx(1.5)
        assert f[0] == 0 and f[1] == 0

    def test_window_outside_signal(self):
        with pytest.raises(OutOfRangeError):
            sc_window_features(flat_decomposition(0.5), 16.0, 6.0)

    def test_names(self):
        assert len(SC_FEATURE_NAMES) == 6
        assert len(IBI_FEATURE_NAMES) == 4
        assert len(PHYSIO_FEATURE_NAMES) == 10


class TestRPeaks:
    def test_sixty_bpm(self):
        fs = 512.0
        ecg, beats = periodic_ecg(60, 121.0, fs)
        peaks = detect_r_peaks(ecg, fs).r_peak_times
        assert abs(peaks.size - 120) <= 1
        tp, _ = match_peaks(peaks, beats)
        assert tp >= 119

    def test_flat_line(self):
        assert len(detect_r_peaks(np.zeros(5120), 512.0)) == 0

    def test_noisy_75_bpm(self):
        fs = 512.0
        ecg, beats = periodic_ecg(75, 60.0, fs, snr_db=20.0, rng=np.random.default_rng(1))
        peaks = detect_r_peaks(ecg, fs).r_peak_times
        tp, n_det = match_peaks(peaks, beats)
        assert tp / beats.size >= 0.99
        assert tp / n_det >= 0.99

    @pytest.mark.parametrize("scale", [0.01, 0.3, 7.0, 250.0])
    def test_amplitude_invariance(self, scale):
        fs = 256.0
        ecg, _ = periodic_ecg(70, 30.0, fs, snr_db=25.0, rng=np.random.default_rng(2))
        base = detect_r_peaks(ecg, fs).r_peak_times
        scaled = detect_r_peaks(ecg * scale, fs).r_peak_times
        assert scaled.size == base.size
        np.testing.assert_allclose(scaled, base, atol=1e-9)

    def test_low_rate_rejected(self):
        with pytest.raises(InputError):
            detect_r_peaks(np.zeros(1000), 50.0)

    def test_t_start_offsets_times(self):
        fs = 256.0
        ecg, _ = periodic_ecg(60, 20.0, fs)
        a = detect_r_peaks(ecg, fs).r_peak_times
        b = detect_r_peaks(ecg, fs, t_start=100.0).r_peak_times
        np.testing.assert_allclose(b - a, 100.0)


class TestIbiFeatures:
    def test_constant(self):
        np.testing.assert_allclose(ibi_features([800, 800, 800]), [800, 0, 0, 0], atol=1e-12)

    def test_linear_trend(self):
        f = ibi_features([800, 810, 820, 830])
        assert f[0] == pytest.approx(815)
        assert f[1] == pytest.approx(10)
        assert f[3] == pytest.approx(10)

    def test_two_intervals(self):
        assert ibi_features([1000, 900])[1] == pytest.approx(100)

    def test_too_few(self):
        assert ibi_features([800]) is None

    def test_window_selection_by_interval_end(self):
        ibis = IbiSeries(np.array([0.0, 1.0, 1.8, 2.8, 3.9, 5.0]))
        f = ibi_window_features(ibis, 1.5, 2.0)  # intervals ending at 1.8 and 2.8
        np.testing.assert_allclose(f[0], 900.0)
        np.testing.assert_allclose(f[1], 200.0)

    @given(st.lists(st.floats(300, 2000), min_size=2, max_size=40))
    def test_against_direct_formulas(self, values):
        v = np.array(values)
        f = ibi_features(v)
        assert f[0] == pytest.approx(np.mean(v))
        assert f[1] == pytest.approx(np.sqrt(np.mean(np.diff(v) ** 2)), abs=1e-9)
        assert f[2] == pytest.approx(np.std(v), abs=1e-9)
        k = np.arange(v.size)
        slope = ((k - k.mean()) * (v - v.mean())).sum() / ((k - k.mean()) ** 2).sum()
        assert f[3] == pytest.approx(slope, abs=1e-6)
