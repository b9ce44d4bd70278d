import numpy as np
import pytest

import oracles
from stressnp import synthgen
from stressnp.dataio import TaskInterval
from stressnp.features import (
    FEATURE_NAMES, FeatureMatrix, csi, extract_features, gsr_phasic_features,
    gsr_tonic_features, hr_features, hrv_freq, hrv_time, read_features_csv, rqa,
    sample_entropy, write_features_csv, ExtractionStats,
)


def random_rr(rng, n=None):
    n = n or int(rng.integers(20, 61))
    return rng.uniform(600.0, 1100.0, size=n)


class TestHrFeatures:
    def test_two_intervals(self):
        hr_mean, hr_range = hr_features(np.array([800.0, 750.0]))
        assert hr_mean == pytest.approx(77.5)
        assert hr_range == pytest.approx(5.0)

    def test_constant(self):
        hr_mean, hr_range = hr_features(np.array([1000.0, 1000.0, 1000.0]))
        assert hr_mean == 60.0 and hr_range == 0.0

    def test_single_interval(self):
        hr_mean, hr_range = hr_features(np.array([600.0]))
        assert hr_mean == pytest.approx(100.0) and hr_range == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            hr_features(np.array([]))


class TestHrvTime:
    rr = np.array([800.0, 810.0, 790.0, 805.0])

    def test_rmssd_hand_value(self):
        assert hrv_time(self.rr)[1] == pytest.approx(np.sqrt((10**2 + 20**2 + 15**2) / 3))

    def test_sdnn_hand_value(self):
        assert hrv_time(self.rr)[0] == pytest.approx(8.539125638299666)

    def test_constant_is_zero(self):
        sdnn, rmssd = hrv_time(np.full(10, 700.0))
        assert sdnn == 0.0 and rmssd == 0.0

    def test_matches_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            rr = random_rr(rng)
            sdnn, rmssd = hrv_time(rr)
            assert sdnn == pytest.approx(oracles.sdnn_oracle(list(rr)), abs=1e-9)
            assert rmssd == pytest.approx(oracles.rmssd_oracle(list(rr)), abs=1e-9)


class TestCsi:
    def test_against_oracle_small(self):
        rr = [800.0, 810.0, 790.0, 805.0]
        assert csi(np.array(rr)) == pytest.approx(oracles.csi_oracle(rr), abs=1e-12)

    def test_constant_degenerate(self):
        flags = []
        assert csi(np.full(8, 800.0), flags) == 0.0
        assert flags == ["csi"]

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            rr = random_rr(rng)
            assert csi(rr) == pytest.approx(oracles.csi_oracle(list(rr)), abs=1e-9)


class TestSampleEntropy:
    def test_alternating_matches_oracle_exactly(self):
        rr = [800.0, 600.0] * 20
        assert sample_entropy(np.array(rr)) == oracles.sampen_oracle(rr)

    def test_constant_is_zero(self):
        assert sample_entropy(np.full(20, 800.0)) == 0.0

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            rr = random_rr(rng, n=50)
            assert sample_entropy(rr) == pytest.approx(
                oracles.sampen_oracle(list(rr)), abs=1e-12
            )

    def test_scale_invariance_with_proportional_r(self):
        rng = np.random.default_rng(19)
        rr = random_rr(rng, n=40)
        assert sample_entropy(rr) == pytest.approx(sample_entropy(2.0 * rr), abs=1e-12)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            sample_entropy(np.array([800.0, 810.0, 790.0]))


class TestRqa:
    def test_no_recurrences(self):
        rr = np.array([100.0, 300.0, 900.0, 2700.0, 8100.0])
        det, ent = rqa(rr, eps=1.0)
        assert det == 0.0 and ent == 0.0

    def test_constant_fully_recurrent(self):
        det, _ = rqa(np.full(12, 800.0))
        assert det == 1.0

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(23)
        for _ in range(30):
            rr = random_rr(rng, n=30)
            det, ent = rqa(rr)
            o_det, o_ent = oracles.rqa_oracle(list(rr))
            assert det == pytest.approx(o_det, abs=1e-12)
            assert ent == pytest.approx(o_ent, abs=1e-12)

    def test_scale_invariance_with_proportional_eps(self):
        rng = np.random.default_rng(29)
        rr = random_rr(rng, n=30)
        det1, ent1 = rqa(rr)
        det2, ent2 = rqa(2.0 * rr)
        assert det1 == pytest.approx(det2, abs=1e-12)
        assert ent1 == pytest.approx(ent2, abs=1e-12)


class TestHrvFreq:
    def test_hf_modulated_tachogram(self):
        # 0.25 Hz modulation on a 0.8 s base rhythm over ~40 s
        rr = [800.0]
        while sum(rr) < 40_000.0:
            t = sum(rr) / 1000.0
            rr.append(800.0 + 50.0 * np.sin(2 * np.pi * 0.25 * t))
        out = hrv_freq(np.array(rr))
        lf_abs, lf_rel, lf_peak, hf_abs, hf_rel, hf_peak, ratio = out
        assert hf_peak == pytest.approx(0.25, abs=0.025)  # one frequency bin
        assert hf_rel >= 0.95
        assert lf_rel + hf_rel == pytest.approx(1.0)

    def test_constant_all_zero(self):
        flags = []
        out = hrv_freq(np.full(50, 800.0), flags=flags)
        assert out == (0.0,) * 7
        assert "freq_total" in flags

    def test_rel_powers_sum_to_one(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            out = hrv_freq(random_rr(rng, n=45))
            if out[0] + out[3] > 0:
                assert out[1] + out[4] == pytest.approx(1.0)

    def test_ratio_is_hf_over_lf(self):
        rng = np.random.default_rng(37)
        out = hrv_freq(random_rr(rng, n=45))
        if out[0] > 0:
            assert out[6] == pytest.approx(out[3] / out[0])


class TestGsrFeatures:
    def test_tonic_constant(self):
        assert gsr_tonic_features(np.full(100, 5.0), 4.0) == (5.0, 0.0, 0.0, 0.0)

    def test_tonic_ramp(self):
        t = np.arange(0, 40, 0.25)
        mean, sd, d1_mean, d1_sd = gsr_tonic_features(0.1 * t, 4.0)
        assert d1_mean == pytest.approx(0.1)
        assert d1_sd == pytest.approx(0.0, abs=1e-12)

    def test_tonic_hand_example(self):
        mean, sd, d1_mean, d1_sd = gsr_tonic_features(np.array([1.0, 2.0, 4.0]), 1.0)
        assert mean == pytest.approx(7 / 3)
        assert d1_mean == pytest.approx(1.5)

    def test_phasic_mav(self):
        sd, mav = gsr_phasic_features(np.array([-1.0, 2.0, -3.0]))
        assert mav == pytest.approx(2.0)

    def test_phasic_zero(self):
        assert gsr_phasic_features(np.zeros(10)) == (0.0, 0.0)

    def test_phasic_alternating(self):
        sd, mav = gsr_phasic_features(np.array([1.0, -1.0, 1.0, -1.0]))
        assert sd == pytest.approx(np.sqrt(4 / 3))
        assert mav == 1.0


def ten_minute_recording(seed=42, snr=25.0):
    profile = synthgen.ParticipantProfile(
        base_hr=62.0, hr_stress_delta=12.0, hrv_scale=1.0, tonic_base=5.0,
        scr_rate_stress=6.0, scr_rate_rest=2.0, seed=seed,
    )
    rec, _ = synthgen.gen_recording(
        profile, [TaskInterval("baseline", 0, 600)], ecg_snr_db=snr
    )
    return rec


class TestExtractFeatures:
    def test_ten_minute_row_count(self):
        stats = ExtractionStats()
        fm = extract_features(ten_minute_recording(), stats=stats)
        assert len(fm) == (600 - 40) // 20 + 1 == 29
        assert stats.dropped_few_rr == 0 and stats.dropped_nonfinite == 0

    def test_flatline_windows_dropped(self):
        rec = ten_minute_recording()
        fs = rec.ecg().sample_rate_hz
        rec.ecg().samples[int(200 * fs): int(260 * fs)] = 0.0
        stats = ExtractionStats()
        fm = extract_features(rec, stats=stats)
        starts = {r.window_start_s for r in fm.rows}
        assert 200.0 not in starts and 220.0 not in starts
        assert stats.dropped_few_rr >= 2

    def test_deterministic(self):
        a = extract_features(ten_minute_recording())
        b = extract_features(ten_minute_recording())
        np.testing.assert_array_equal(a.X(), b.X())

    def test_channel_locality(self):
        rec1 = ten_minute_recording()
        rec2 = ten_minute_recording()
        rec2.gsr().samples = rec2.gsr().samples + 2.0
        ecg_cols = [i for i, n in enumerate(FEATURE_NAMES) if not n.startswith(("tonic", "phasic"))]
        a, b = extract_features(rec1).X(), extract_features(rec2).X()
        np.testing.assert_array_equal(a[:, ecg_cols], b[:, ecg_cols])
        assert not np.allclose(a[:, FEATURE_NAMES.index("tonic_mean")],
                               b[:, FEATURE_NAMES.index("tonic_mean")])

    def test_row_value_ranges(self):
        fm = extract_features(ten_minute_recording())
        X = fm.X()
        names = list(FEATURE_NAMES)
        assert np.all(X[:, names.index("rqa_det")] >= 0) and np.all(X[:, names.index("rqa_det")] <= 1)
        for col in ("sdnn", "rmssd", "tonic_sd", "phasic_sd", "phasic_mav"):
            assert np.all(X[:, names.index(col)] >= 0)
        for col in ("lf_rel", "hf_rel"):
            assert np.all((X[:, names.index(col)] >= 0) & (X[:, names.index(col)] <= 1))

    def test_csv_round_trip(self, tmp_path):
        fm = extract_features(ten_minute_recording())
        path = tmp_path / "features.csv"
        write_features_csv(fm, path)
        loaded = read_features_csv(path)
        np.testing.assert_array_equal(fm.X(), loaded.X())
        np.testing.assert_array_equal(fm.y(), loaded.y())
        assert [r.source_label for r in fm.rows] == [r.source_label for r in loaded.rows]
