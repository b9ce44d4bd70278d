"""Per-window feature computation and participant feature matrices.

21 features per 40 s window: heart rate and HRV statistics from the RR
series (time domain, Poincare geometry, sample entropy, recurrence
quantification, LF/HF spectra) plus tonic and phasic GSR statistics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import periodogram

from . import dsp
from .dataio import Recording, Window, WindowSpec, make_windows

FEATURE_NAMES = (
    "hr_range",
    "hr_mean",
    "sdnn",
    "rmssd",
    "csi",
    "sampen",
    "rqa_det",
    "rqa_len_entropy",
    "lf_abs",
    "lf_rel",
    "lf_peak",
    "hf_abs",
    "hf_rel",
    "hf_peak",
    "hf_lf_ratio",
    "tonic_mean",
    "tonic_sd",
    "tonic_d1_mean",
    "tonic_d1_sd",
    "phasic_sd",
    "phasic_mav",
)
N_FEATURES = len(FEATURE_NAMES)

LF_BAND_HZ = (0.04, 0.15)
HF_BAND_HZ = (0.15, 0.40)
TACHOGRAM_FS_HZ = 4.0


def hr_features(rr: np.ndarray) -> tuple[float, float]:
    """(hr_mean, hr_range) in bpm from the beatwise rate series 60000/rr."""
    rr = np.asarray(rr, dtype=np.float64)
    if rr.size == 0:
        raise ValueError("empty rr series")
    hr = 60000.0 / rr
    return float(hr.mean()), float(hr.max() - hr.min())


def hrv_time(rr: np.ndarray) -> tuple[float, float]:
    """(sdnn, rmssd) in ms; sample SD with N-1 denominator."""
    rr = np.asarray(rr, dtype=np.float64)
    if rr.size < 2:
        raise ValueError("need >= 2 rr intervals")
    sdnn = float(rr.std(ddof=1))
    rmssd = float(np.sqrt(np.mean(np.diff(rr) ** 2)))
    return sdnn, rmssd


def csi(rr: np.ndarray, flags: list[str] | None = None) -> float:
    """Cardiac sympathetic index SD2/SD1 from Poincare-plot axes.

    SD1^2 = var(successive diffs)/2 and SD2^2 = 2 var(rr) - var(diffs)/2,
    both with sample variance. Degenerate plots (SD1 = 0, or SD2^2 clamped
    at 0) return 0 and flag the window.
    """
    rr = np.asarray(rr, dtype=np.float64)
    if rr.size < 3:
        raise ValueError("need >= 3 rr intervals")
    var_d = float(np.diff(rr).var(ddof=1))
    var_rr = float(rr.var(ddof=1))
    sd1 = math.sqrt(var_d / 2.0)
    sd2_sq = 2.0 * var_rr - var_d / 2.0
    if sd1 == 0.0 or sd2_sq < 0.0:
        if flags is not None:
            flags.append("csi")
        return 0.0
    return math.sqrt(sd2_sq) / sd1


def sample_entropy(
    rr: np.ndarray, m: int = 2, r: float | None = None, flags: list[str] | None = None
) -> float:
    """Sample entropy -ln(A/B) of the RR series.

    A and B count template pairs (Chebyshev distance <= r, self-matches
    excluded) of lengths m+1 and m over the same n-m template start points.
    r defaults to 0.2 * sample SD. Zero matches at either length returns 0
    and flags the window.
    """
    x = np.asarray(rr, dtype=np.float64)
    n = x.size
    if n < m + 2:
        raise ValueError(f"need >= {m + 2} rr intervals")
    if r is None:
        r = 0.2 * float(x.std(ddof=1))

    def pair_count(length: int) -> int:
        n_t = n - m
        tpl = np.lib.stride_tricks.sliding_window_view(x, length)[:n_t]
        dist = np.abs(tpl[:, None, :] - tpl[None, :, :]).max(axis=2)
        return int(np.count_nonzero(np.triu(dist <= r, k=1)))

    b = pair_count(m)
    a = pair_count(m + 1)
    if a == 0 or b == 0:
        if flags is not None:
            flags.append("sampen")
        return 0.0
    return float(-np.log(a / b))


def rqa(rr: np.ndarray, eps: float | None = None, min_line: int = 2) -> tuple[float, float]:
    """(determinism, diagonal line-length entropy) of the RR recurrence plot.

    Embedding dimension 1: points i, j recur iff |rr_i - rr_j| <= eps, with
    eps defaulting to 0.2 * sample SD. Determinism is the fraction of
    off-main-diagonal recurrent points lying on diagonal lines of length
    >= min_line; the entropy (nats) is over the line-length histogram.
    A fully recurrent plot (degenerate eps on a constant series) is
    deterministic by convention: det = 1.
    """
    x = np.asarray(rr, dtype=np.float64)
    n = x.size
    if n < 4:
        raise ValueError("need >= 4 rr intervals")
    if eps is None:
        eps = 0.2 * float(x.std(ddof=1))
    rec = np.abs(x[:, None] - x[None, :]) <= eps

    total = int(rec.sum()) - n  # main diagonal is always recurrent
    if total <= 0:
        return 0.0, 0.0
    fully_recurrent = total == n * n - n

    lengths: list[int] = []
    for k in range(1, n):  # upper triangle; lower is symmetric
        run = 0
        for v in np.diagonal(rec, offset=k):
            if v:
                run += 1
            else:
                if run >= min_line:
                    lengths.append(run)
                run = 0
        if run >= min_line:
            lengths.append(run)

    if fully_recurrent:
        det = 1.0
    elif lengths:
        det = 2.0 * sum(lengths) / total
    else:
        det = 0.0
    if not lengths:
        return det, 0.0
    _, counts = np.unique(lengths, return_counts=True)
    p = counts / counts.sum()
    entropy = float(-(p * np.log(p)).sum())
    return float(det), entropy


def hrv_freq(
    rr: np.ndarray, window_len_s: float = 40.0, flags: list[str] | None = None
) -> tuple[float, float, float, float, float, float, float]:
    """LF/HF spectral features of the RR tachogram.

    The tachogram is resampled at 4 Hz (cubic), mean-removed, and measured
    with a single Hann-windowed periodogram zero-padded to the nominal
    window length so the frequency grid is identical across windows.
    Returns (lf_abs, lf_rel, lf_peak, hf_abs, hf_rel, hf_peak, hf_lf_ratio);
    powers in ms^2, relative powers normalized by LF+HF, ratio = HF/LF.
    """
    x = np.asarray(rr, dtype=np.float64)
    if x.size < 4:
        raise ValueError("need >= 4 rr intervals")
    t = np.cumsum(x) / 1000.0
    grid = np.arange(t[0], t[-1], 1.0 / TACHOGRAM_FS_HZ)
    if grid.size < 2:
        if flags is not None:
            flags.append("freq_total")
        return (0.0,) * 7
    tach = CubicSpline(t, x)(grid)
    tach = tach - tach.mean()
    nfft = max(int(round(window_len_s * TACHOGRAM_FS_HZ)), grid.size)
    f, psd = periodogram(tach, fs=TACHOGRAM_FS_HZ, window="hann", nfft=nfft, detrend=False)
    df = f[1] - f[0]
    lf_mask = (f >= LF_BAND_HZ[0]) & (f < LF_BAND_HZ[1])
    hf_mask = (f >= HF_BAND_HZ[0]) & (f <= HF_BAND_HZ[1])
    lf_abs = float(psd[lf_mask].sum() * df)
    hf_abs = float(psd[hf_mask].sum() * df)
    total = lf_abs + hf_abs
    if total > 0:
        lf_rel, hf_rel = lf_abs / total, hf_abs / total
    else:
        lf_rel = hf_rel = 0.0
        if flags is not None:
            flags.append("freq_total")
    lf_peak = float(f[lf_mask][np.argmax(psd[lf_mask])]) if lf_abs > 0 else 0.0
    hf_peak = float(f[hf_mask][np.argmax(psd[hf_mask])]) if hf_abs > 0 else 0.0
    if lf_abs > 0:
        ratio = hf_abs / lf_abs
    else:
        ratio = 0.0
        if flags is not None:
            flags.append("freq_lf")
    return lf_abs, lf_rel, lf_peak, hf_abs, hf_rel, hf_peak, ratio


def gsr_tonic_features(tonic: np.ndarray, fs: float) -> tuple[float, float, float, float]:
    """(mean, sd, d1_mean, d1_sd) of the tonic level; derivative in uS/s."""
    x = np.asarray(tonic, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need >= 2 samples")
    d1 = np.diff(x) * fs
    d1_sd = float(d1.std(ddof=1)) if d1.size >= 2 else 0.0
    return float(x.mean()), float(x.std(ddof=1)), float(d1.mean()), d1_sd


def gsr_phasic_features(phasic: np.ndarray) -> tuple[float, float]:
    """(sd, mean absolute value) of the phasic component."""
    x = np.asarray(phasic, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need >= 2 samples")
    return float(x.std(ddof=1)), float(np.mean(np.abs(x)))


# ---------------------------------------------------------------------------
# window -> row assembly
# ---------------------------------------------------------------------------


@dataclass
class FeatureWindow:
    participant_id: str
    window_start_s: float
    window_end_s: float
    source_label: str
    label: int
    features: np.ndarray  # shape (21,), order = FEATURE_NAMES
    flags: tuple[str, ...] = ()


@dataclass
class FeatureMatrix:
    rows: list[FeatureWindow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r.participant_id, r.window_start_s))

    def X(self) -> np.ndarray:
        if not self.rows:
            return np.empty((0, N_FEATURES))
        return np.stack([r.features for r in self.rows])

    def y(self) -> np.ndarray:
        return np.array([r.label for r in self.rows], dtype=np.int64)

    def participants(self) -> list[str]:
        return sorted({r.participant_id for r in self.rows})

    def for_participant(self, pid: str) -> "FeatureMatrix":
        return FeatureMatrix([r for r in self.rows if r.participant_id == pid])

    def excluding_participant(self, pid: str) -> "FeatureMatrix":
        return FeatureMatrix([r for r in self.rows if r.participant_id != pid])


@dataclass
class ExtractionStats:
    windows_total: int = 0
    rows_emitted: int = 0
    dropped_few_rr: int = 0
    dropped_nonfinite: int = 0
    flag_counts: dict[str, int] = field(default_factory=dict)

    def count_flags(self, flags: list[str]) -> None:
        for name in flags:
            self.flag_counts[name] = self.flag_counts.get(name, 0) + 1

    def as_dict(self) -> dict:
        return {
            "windows_total": self.windows_total,
            "rows_emitted": self.rows_emitted,
            "dropped_few_rr": self.dropped_few_rr,
            "dropped_nonfinite": self.dropped_nonfinite,
            "flag_counts": dict(sorted(self.flag_counts.items())),
        }


def _slice(channel, start_s: float, end_s: float) -> np.ndarray:
    i0 = int(round(start_s * channel.sample_rate_hz))
    i1 = int(round(end_s * channel.sample_rate_hz))
    return channel.samples[i0:i1]


def extract_features(
    rec: Recording,
    spec: WindowSpec | None = None,
    label_map: dict[str, str] | None = None,
    stats: ExtractionStats | None = None,
) -> FeatureMatrix:
    """Compute the full feature matrix for one recording.

    Each window is processed independently from its own channel slices
    (hand GSR preferred over foot). Windows with fewer than 2 usable RR
    intervals, or any non-finite feature, are dropped and counted; features
    whose RR-count preconditions fail are set to 0 and flagged.
    """
    rec.validate()
    spec = spec or WindowSpec()
    stats = stats if stats is not None else ExtractionStats()
    ecg = rec.ecg()
    gsr = rec.gsr()

    out = FeatureMatrix()
    for w in make_windows(rec, spec, label_map):
        stats.windows_total += 1
        flags: list[str] = []

        peaks = dsp.detect_r_peaks(_slice(ecg, w.start_s, w.end_s), ecg.sample_rate_hz)
        rr = dsp.rr_intervals(peaks)
        if rr.size < 2:
            stats.dropped_few_rr += 1
            continue

        hr_mean, hr_range = hr_features(rr)
        sdnn, rmssd = hrv_time(rr)
        csi_v = csi(rr, flags) if rr.size >= 3 else _flagged(flags, "csi")
        sampen_v = sample_entropy(rr, flags=flags) if rr.size >= 4 else _flagged(flags, "sampen")
        if rr.size >= 4:
            det, len_ent = rqa(rr)
            freq = hrv_freq(rr, spec.length_s, flags)
        else:
            det = len_ent = _flagged(flags, "rqa")
            freq = (_flagged(flags, "freq_total"),) + (0.0,) * 6

        tonic, phasic = dsp.decompose_gsr(_slice(gsr, w.start_s, w.end_s), gsr.sample_rate_hz)
        t_mean, t_sd, t_d1_mean, t_d1_sd = gsr_tonic_features(tonic, gsr.sample_rate_hz)
        p_sd, p_mav = gsr_phasic_features(phasic)

        vec = np.array(
            [hr_range, hr_mean, sdnn, rmssd, csi_v, sampen_v, det, len_ent, *freq,
             t_mean, t_sd, t_d1_mean, t_d1_sd, p_sd, p_mav],
            dtype=np.float64,
        )
        if not np.all(np.isfinite(vec)):
            stats.dropped_nonfinite += 1
            continue
        stats.rows_emitted += 1
        stats.count_flags(flags)
        out.rows.append(
            FeatureWindow(rec.participant_id, w.start_s, w.end_s, w.source_label, w.label,
                          vec, tuple(flags))
        )
    out.sort()
    return out


def _flagged(flags: list[str], name: str) -> float:
    flags.append(name)
    return 0.0


# ---------------------------------------------------------------------------
# feature file IO
# ---------------------------------------------------------------------------

_CSV_HEADER = ["participant_id", "window_start_s", "window_end_s", "source_label", "label"] + list(
    FEATURE_NAMES
)


def write_features_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    matrix.sort()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for r in matrix.rows:
            writer.writerow(
                [r.participant_id, repr(r.window_start_s), repr(r.window_end_s),
                 r.source_label, r.label]
                + [repr(float(v)) for v in r.features]
            )


def read_features_csv(path: str | Path) -> FeatureMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise ValueError(f"unexpected feature file header: {header!r}")
        rows = []
        for row in reader:
            if not row:
                continue
            rows.append(
                FeatureWindow(
                    row[0], float(row[1]), float(row[2]), row[3], int(row[4]),
                    np.array([float(v) for v in row[5:]], dtype=np.float64),
                )
            )
    m = FeatureMatrix(rows)
    m.sort()
    return m
