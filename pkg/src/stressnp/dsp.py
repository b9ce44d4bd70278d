"""Digital filtering, GSR decomposition, and ECG R-peak detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps
from scipy.ndimage import maximum_filter1d

TONIC_CUTOFF_HZ = 0.2
PHASIC_BAND_HZ = (0.5, 2.0)
FILTER_ORDER = 5

# R-peak detector constants (Hamilton/Tompkins style)
QRS_BAND_HZ = (8.0, 16.0)
QRS_BAND_ORDER = 3
INTEGRATION_WINDOW_S = 0.080
REFRACTORY_S = 0.200
SEARCHBACK_FACTOR = 1.5
THRESHOLD_COEF = 0.3125
PEAK_ESTIMATE_ALPHA = 0.125  # running-average weight for signal/noise peak levels
REFINE_RADIUS_S = 0.040

RR_MIN_MS = 300.0
RR_MAX_MS = 2000.0


class FilterParameterError(ValueError):
    pass


@dataclass
class FilterSpec:
    kind: str  # "lowpass" | "bandpass"
    cutoffs_hz: tuple[float, ...]
    sample_rate_hz: float
    order: int = FILTER_ORDER

    def validate(self) -> None:
        nyq = self.sample_rate_hz / 2.0
        if self.kind not in ("lowpass", "bandpass"):
            raise FilterParameterError(f"unknown filter kind {self.kind!r}")
        n_cut = {"lowpass": 1, "bandpass": 2}[self.kind]
        if len(self.cutoffs_hz) != n_cut:
            raise FilterParameterError(f"{self.kind} needs {n_cut} cutoff(s)")
        for c in self.cutoffs_hz:
            if not (0 < c < nyq):
                raise FilterParameterError(f"cutoff {c} Hz outside (0, Nyquist={nyq} Hz)")
        if self.kind == "bandpass" and not (self.cutoffs_hz[0] < self.cutoffs_hz[1]):
            raise FilterParameterError("bandpass needs low < high")


@dataclass
class RPeakSeries:
    peak_times_s: np.ndarray  # strictly increasing, >= 0.2 s apart


def _sos(spec: FilterSpec) -> np.ndarray:
    # Cascaded second-order sections (bilinear transform with pre-warping);
    # numerically stable even for cutoffs far below the sample rate.
    wn = np.asarray(spec.cutoffs_hz) / (spec.sample_rate_hz / 2.0)
    btype = "lowpass" if spec.kind == "lowpass" else "bandpass"
    return sps.butter(spec.order, wn if len(wn) > 1 else wn[0], btype=btype, output="sos")


def butterworth_filter(x: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Zero-phase Butterworth filter (forward-backward, reflected edge padding)."""
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 3 * spec.order:
        raise FilterParameterError(f"signal too short: {len(x)} < {3 * spec.order}")
    padlen = min(3 * spec.order, len(x) - 1)
    return sps.sosfiltfilt(_sos(spec), x, padlen=padlen)


def butterworth_gain(freq_hz: float, cutoff_hz: float, order: int = FILTER_ORDER) -> float:
    """Analytic single-pass lowpass magnitude 1 / sqrt(1 + (f/fc)^(2n))."""
    return 1.0 / np.sqrt(1.0 + (freq_hz / cutoff_hz) ** (2 * order))


def decompose_gsr(gsr: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Split raw GSR into tonic (0.2 Hz lowpass) and phasic (0.5-2 Hz bandpass)."""
    if not fs > 4.0:
        raise FilterParameterError(f"gsr sample rate {fs} Hz must exceed 4 Hz")
    tonic = butterworth_filter(gsr, FilterSpec("lowpass", (TONIC_CUTOFF_HZ,), fs))
    phasic = butterworth_filter(gsr, FilterSpec("bandpass", PHASIC_BAND_HZ, fs))
    return tonic, phasic


def detect_r_peaks(ecg: np.ndarray, fs: float) -> RPeakSeries:
    """Detect ECG R peaks (Hamilton/Tompkins style adaptive thresholding).

    Pipeline: 8-16 Hz zero-phase bandpass, central-difference derivative,
    rectification, 80 ms moving-window integration, adaptive dual thresholds
    on running signal/noise peak levels with a 200 ms refractory period and a
    search-back at 1.5x the running RR average. Detections are refined to the
    local raw-ECG maximum within +/-40 ms.
    """
    ecg = np.asarray(ecg, dtype=np.float64)
    if fs < 100:
        raise FilterParameterError(f"ecg sample rate {fs} Hz must be >= 100 Hz")
    if len(ecg) / fs < 5.0:
        raise FilterParameterError("ecg shorter than 5 s")

    band = butterworth_filter(ecg, FilterSpec("bandpass", QRS_BAND_HZ, fs, order=QRS_BAND_ORDER))
    deriv = np.gradient(band)
    rect = np.abs(deriv)
    win = max(1, int(round(INTEGRATION_WINDOW_S * fs)))
    mwi = np.convolve(rect, np.ones(win) / win, mode="same")

    refractory = int(round(REFRACTORY_S * fs))

    # candidate fiducials: local maxima of the integrated signal that also
    # dominate their refractory neighborhood, so filter ringing around a QRS
    # cannot outrank the complex itself
    cand = np.flatnonzero((mwi[1:-1] > mwi[:-2]) & (mwi[1:-1] >= mwi[2:])) + 1
    if cand.size == 0:
        return RPeakSeries(np.empty(0))
    neighborhood_max = maximum_filter1d(mwi, size=2 * refractory + 1)
    cand = cand[mwi[cand] >= neighborhood_max[cand]]
    if cand.size == 0:
        return RPeakSeries(np.empty(0))
    # learning phase: seed the running estimates from the first 2 s so the
    # first few candidates cannot drag the signal level toward noise
    learn = mwi[: int(round(2.0 * fs))]
    spk = float(learn.max())  # running signal-peak level
    npk = 0.5 * float(learn.mean())  # running noise-peak level
    qrs: list[int] = []
    recent_rr: list[float] = []

    def threshold() -> float:
        return npk + THRESHOLD_COEF * (spk - npk)

    def accept(idx: int, value: float) -> None:
        nonlocal spk
        if qrs:
            rr = float(idx - qrs[-1])
            recent_rr.append(rr)
            if len(recent_rr) > 8:
                recent_rr.pop(0)
        qrs.append(idx)
        spk = PEAK_ESTIMATE_ALPHA * value + (1 - PEAK_ESTIMATE_ALPHA) * spk

    for i in cand:
        v = mwi[i]
        if qrs and i - qrs[-1] < refractory:
            continue
        if v > threshold():
            # search-back: a long gap since the last beat means we likely
            # missed one; recover the best sub-threshold candidate in between
            if recent_rr and qrs and (i - qrs[-1]) > SEARCHBACK_FACTOR * np.mean(recent_rr):
                lo, hi = qrs[-1] + refractory, i - refractory
                in_gap = cand[(cand >= lo) & (cand <= hi)]
                if in_gap.size:
                    back = in_gap[np.argmax(mwi[in_gap])]
                    if mwi[back] > 0.5 * threshold():
                        accept(int(back), float(mwi[back]))
            accept(int(i), float(v))
        else:
            npk = PEAK_ESTIMATE_ALPHA * v + (1 - PEAK_ESTIMATE_ALPHA) * npk

    # refine each fiducial to the raw-ECG local maximum
    radius = int(round(REFINE_RADIUS_S * fs))
    refined = []
    for i in qrs:
        lo, hi = max(0, i - radius), min(len(ecg), i + radius + 1)
        refined.append(lo + int(np.argmax(ecg[lo:hi])))

    # deduplicate anything the refinement pulled inside the refractory period
    kept: list[int] = []
    for i in sorted(set(refined)):
        if kept and i - kept[-1] < refractory:
            if ecg[i] > ecg[kept[-1]]:
                kept[-1] = i
        else:
            kept.append(i)
    return RPeakSeries(np.asarray(kept, dtype=np.float64) / fs)


def rr_intervals(peaks: RPeakSeries) -> np.ndarray:
    """Successive R-peak gaps in ms, with implausible intervals removed."""
    t = np.asarray(peaks.peak_times_s, dtype=np.float64)
    if t.size < 2:
        return np.empty(0)
    rr = np.diff(t) * 1000.0
    return rr[(rr >= RR_MIN_MS) & (rr <= RR_MAX_MS)]
