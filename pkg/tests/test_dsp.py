import numpy as np
import pytest

from stressnp import synthgen
from stressnp.dataio import TaskInterval
from stressnp.dsp import (
    FilterParameterError, FilterSpec, RPeakSeries, butterworth_filter, butterworth_gain,
    decompose_gsr, detect_r_peaks, rr_intervals,
)


def central(x, frac=0.25):
    n = len(x)
    return x[int(n * frac): int(n * (1 - frac))]


class TestButterworth:
    def test_lowpass_unity_dc_gain(self):
        fs = 32.0
        x = np.full(int(fs * 120), 3.7)
        y = butterworth_filter(x, FilterSpec("lowpass", (0.2,), fs))
        assert np.max(np.abs(central(y) - 3.7)) < 1e-6

    def test_lowpass_stopband_attenuation(self):
        fs = 32.0
        t = np.arange(int(fs * 240)) / fs
        x = np.sin(2 * np.pi * 2.0 * t)  # 10x the 0.2 Hz cutoff
        y = butterworth_filter(x, FilterSpec("lowpass", (0.2,), fs))
        measured = np.max(np.abs(central(y)))
        atten_db = -20 * np.log10(measured)
        assert atten_db >= 60.0
        # forward-backward application should do at least as well as the
        # analytic single-pass magnitude
        assert measured <= butterworth_gain(2.0, 0.2) * 1.01

    def test_bandpass_rejects_dc(self):
        fs = 32.0
        x = np.full(int(fs * 120), 5.0)
        y = butterworth_filter(x, FilterSpec("bandpass", (0.5, 2.0), fs))
        assert np.max(np.abs(central(y))) < 1e-6

    def test_output_length_matches_input(self):
        fs = 32.0
        x = np.random.default_rng(0).standard_normal(500)
        y = butterworth_filter(x, FilterSpec("lowpass", (0.2,), fs))
        assert len(y) == len(x)

    def test_cutoff_at_nyquist_rejected(self):
        with pytest.raises(FilterParameterError, match="Nyquist"):
            butterworth_filter(np.zeros(100), FilterSpec("lowpass", (16.0,), 32.0))

    def test_bandpass_needs_low_below_high(self):
        with pytest.raises(FilterParameterError, match="low < high"):
            butterworth_filter(np.zeros(100), FilterSpec("bandpass", (2.0, 0.5), 32.0))

    def test_too_short_signal_rejected(self):
        with pytest.raises(FilterParameterError, match="too short"):
            butterworth_filter(np.zeros(10), FilterSpec("lowpass", (0.2,), 32.0))

    def test_linearity(self):
        fs = 32.0
        rng = np.random.default_rng(1)
        x = rng.standard_normal(600)
        y = rng.standard_normal(600)
        spec = FilterSpec("bandpass", (0.5, 2.0), fs)
        lhs = butterworth_filter(2.5 * x - 1.5 * y, spec)
        rhs = 2.5 * butterworth_filter(x, spec) - 1.5 * butterworth_filter(y, spec)
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_zero_phase_in_passband(self):
        fs = 32.0
        t = np.arange(int(fs * 120)) / fs
        x = np.sin(2 * np.pi * 1.0 * t)  # center of the 0.5-2 Hz band
        y = butterworth_filter(x, FilterSpec("bandpass", (0.5, 2.0), fs))
        xc, yc = central(x), central(y)
        lags = np.arange(-5, 6)
        corr = [np.dot(yc[5:-5], xc[5 + k: len(xc) - 5 + k]) for k in lags]
        assert abs(lags[int(np.argmax(corr))]) <= 1


class TestDecomposeGsr:
    fs = 32.0

    def test_constant(self):
        tonic, phasic = decompose_gsr(np.full(int(self.fs * 120), 5.0), self.fs)
        assert np.max(np.abs(central(tonic) - 5.0)) < 1e-6
        assert np.max(np.abs(central(phasic))) < 1e-6

    def test_sinusoid_in_phasic_passband(self):
        t = np.arange(int(self.fs * 240)) / self.fs
        gsr = 5.0 + 0.5 * np.sin(2 * np.pi * 1.0 * t)
        tonic, phasic = decompose_gsr(gsr, self.fs)
        assert np.max(np.abs(central(tonic) - 5.0)) < 0.02
        # 1 Hz is the geometric band center: passband gain about 1
        assert np.max(np.abs(central(phasic) - 0.5 * np.sin(2 * np.pi * 1.0 * central(t)))) < 0.02

    def test_slow_ramp_stays_tonic(self):
        t = np.arange(int(self.fs * 240)) / self.fs
        tonic, phasic = decompose_gsr(2.0 + 0.01 * t, self.fs)
        assert np.max(np.abs(central(phasic))) < 1e-4
        mid = central(t)
        assert np.max(np.abs(central(tonic) - (2.0 + 0.01 * mid))) < 1e-3

    def test_low_sample_rate_rejected(self):
        with pytest.raises(FilterParameterError, match="exceed 4"):
            decompose_gsr(np.zeros(100), 4.0)


def clean_profile(base_hr, seed=11):
    return synthgen.ParticipantProfile(
        base_hr=base_hr, hr_stress_delta=10.0, hrv_scale=1.0, tonic_base=5.0,
        scr_rate_stress=6.0, scr_rate_rest=2.0, seed=seed,
    )


def match_stats(detected, truth, tol_s=0.020):
    tp = sum(1 for t in truth if detected.size and np.min(np.abs(detected - t)) <= tol_s)
    fp = sum(1 for d in detected if truth.size and np.min(np.abs(truth - d)) > tol_s)
    sens = tp / len(truth)
    ppv = (len(detected) - fp) / max(len(detected), 1)
    return sens, ppv


class TestDetectRPeaks:
    def test_clean_60bpm_exact(self):
        rec, truth = synthgen.gen_recording(
            clean_profile(60.0), [TaskInterval("baseline", 0, 300)], ecg_snr_db=None
        )
        peaks = detect_r_peaks(rec.ecg().samples, rec.ecg().sample_rate_hz)
        sens, ppv = match_stats(peaks.peak_times_s, truth.peak_times_s)
        assert sens == 1.0 and ppv == 1.0

    def test_all_zero_signal_empty(self):
        peaks = detect_r_peaks(np.zeros(250 * 10), 250.0)
        assert peaks.peak_times_s.size == 0

    def test_noisy_80bpm(self):
        rec, truth = synthgen.gen_recording(
            clean_profile(80.0, seed=3), [TaskInterval("baseline", 0, 300)], ecg_snr_db=10.0
        )
        peaks = detect_r_peaks(rec.ecg().samples, rec.ecg().sample_rate_hz)
        sens, ppv = match_stats(peaks.peak_times_s, truth.peak_times_s)
        assert sens >= 0.99 and ppv >= 0.99

    def test_refractory_invariant(self):
        rec, _ = synthgen.gen_recording(
            clean_profile(85.0, seed=5), [TaskInterval("baseline", 0, 120)], ecg_snr_db=10.0
        )
        peaks = detect_r_peaks(rec.ecg().samples, rec.ecg().sample_rate_hz)
        assert np.all(np.diff(peaks.peak_times_s) >= 0.2)

    def test_shift_equivariance(self):
        fs = 250.0
        rec, _ = synthgen.gen_recording(
            clean_profile(70.0, seed=9), [TaskInterval("baseline", 0, 120)], ecg_snr_db=None
        )
        x = rec.ecg().samples
        k = 37
        base = detect_r_peaks(x, fs).peak_times_s
        shifted = detect_r_peaks(np.concatenate([np.zeros(k), x]), fs).peak_times_s - k / fs
        interior = base[(base > 5.0) & (base < 115.0)]
        for t in interior:
            assert np.min(np.abs(shifted - t)) <= 1.0 / fs + 1e-12

    def test_too_short_rejected(self):
        with pytest.raises(FilterParameterError, match="5 s"):
            detect_r_peaks(np.zeros(250 * 4), 250.0)
        with pytest.raises(FilterParameterError, match="100"):
            detect_r_peaks(np.zeros(1000), 50.0)


class TestRrIntervals:
    def test_basic(self):
        rr = rr_intervals(RPeakSeries(np.array([0.0, 0.8, 1.6])))
        np.testing.assert_allclose(rr, [800.0, 800.0])

    def test_implausible_interval_removed(self):
        rr = rr_intervals(RPeakSeries(np.array([0.0, 0.8, 3.5])))
        np.testing.assert_allclose(rr, [800.0])

    def test_single_peak_empty(self):
        assert rr_intervals(RPeakSeries(np.array([0.6]))).size == 0

    def test_invariant_to_prepended_silence(self):
        peaks = np.array([0.5, 1.3, 2.1, 3.0])
        a = rr_intervals(RPeakSeries(peaks))
        b = rr_intervals(RPeakSeries(peaks + 100.0))
        np.testing.assert_allclose(a, b)
