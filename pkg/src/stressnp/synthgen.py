"""Deterministic synthetic cohort generator with ground-truth R peaks.

Recordings are physiologically styled rather than realistic: ECG is a
periodic bump template placed at RR-modulated beat times, GSR is a tonic
level plus Poisson-arriving skin-conductance responses. Person-specific
offsets (resting rate, tonic level, SCR rates) are large relative to the
within-person stress effects, so personalized context genuinely helps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Recording, SignalChannel, TaskInterval
from .dsp import RPeakSeries

ECG_FS_HZ = 250.0
GSR_FS_HZ = 32.0
RESP_MOD_HZ = 0.25
SCR_RISE_S = 0.75
SCR_DECAY_S = 2.0


@dataclass
class ParticipantProfile:
    base_hr: float  # bpm, in [50, 90]
    hr_stress_delta: float  # bpm added during positive-class tasks
    hrv_scale: float  # scales respiratory RR modulation
    tonic_base: float  # uS
    scr_rate_stress: float  # SCRs per minute during positive-class tasks
    scr_rate_rest: float  # SCRs per minute otherwise
    seed: int

    def validate(self) -> None:
        if not (50 <= self.base_hr <= 90):
            raise ValueError(f"base_hr {self.base_hr} outside [50, 90]")
        if self.hr_stress_delta <= 0 or self.hrv_scale <= 0:
            raise ValueError("deltas must be positive")


STRESSFUL_TASKS = frozenset({"stress", "city1", "city2", "city3"})


def wesad_protocol(stress_first: bool = False,
                   rng: np.random.Generator | None = None) -> list[TaskInterval]:
    """Scaled-down WESAD-style protocol; stress/amusement order alternates.

    Block durations jitter per participant (as in the source studies), so
    positive prevalence is person-specific.
    """
    jitter = (lambda: float(rng.uniform(0.55, 1.6))) if rng is not None else (lambda: 1.0)
    blocks = [("stress", 600.0), ("meditation", 150.0), ("amusement", 360.0)]
    if not stress_first:
        blocks = [("amusement", 360.0), ("meditation", 150.0), ("stress", 600.0)]
    blocks = [("baseline", 900.0)] + blocks + [("rest", 150.0)]
    out = []
    t = 0.0
    for label, dur in blocks:
        dur *= jitter()
        out.append(TaskInterval(label, t, t + dur))
        t += dur
    return out


def drivedb_protocol(rng: np.random.Generator | None = None) -> list[TaskInterval]:
    """Scaled-down drive route: rest, three city and two highway segments.

    Segment durations jitter per participant, mirroring the road-condition
    variation of the source recordings.
    """
    jitter = (lambda: float(rng.uniform(0.55, 1.6))) if rng is not None else (lambda: 1.0)
    blocks = [
        ("baseline", 600.0),
        ("city1", 360.0),
        ("highway1", 300.0),
        ("city2", 360.0),
        ("highway2", 300.0),
        ("city3", 360.0),
        ("rest", 150.0),
    ]
    out = []
    t = 0.0
    for label, dur in blocks:
        dur *= jitter()
        out.append(TaskInterval(label, t, t + dur))
        t += dur
    return out


def _arousal(t: float, protocol: list[TaskInterval]) -> float:
    """0 at rest, 1 in stressful tasks, fractional for amusement."""
    for iv in protocol:
        if iv.start_s <= t < iv.end_s:
            if iv.label in STRESSFUL_TASKS:
                return 1.0
            if iv.label == "amusement":
                return 0.35
            return 0.0
    return 0.0


def _slow_wander(rng: np.random.Generator, n_components: int = 3):
    """Smooth seeded drift of roughly unit amplitude over minutes."""
    periods = rng.uniform(180.0, 600.0, n_components)
    phases = rng.uniform(0.0, 2 * np.pi, n_components)

    def f(t):
        acc = 0.0
        for p, ph in zip(periods, phases):
            acc += np.sin(2 * np.pi * t / p + ph)
        return acc / np.sqrt(n_components)

    return f


def _beat_times(profile: ParticipantProfile, duration: float,
                protocol: list[TaskInterval], rng: np.random.Generator) -> np.ndarray:
    # person-specific timing texture, independent of the modulation depth
    stress_depth_factor = float(rng.uniform(0.65, 0.72))
    jitter = float(rng.uniform(0.009, 0.012))
    # slow autonomic drift: on single windows it masks who is being observed,
    # so only an aggregated context can anchor the person
    hr_wander = _slow_wander(rng)
    hr_wander_amp = float(rng.uniform(4.5, 6.0))
    times = []
    t = float(rng.uniform(0.0, 0.3))
    while t < duration:
        times.append(t)
        arousal = _arousal(t, protocol)
        hr = (profile.base_hr + profile.hr_stress_delta * arousal
              + hr_wander_amp * hr_wander(t))
        if hr > 82.0:  # smooth ceiling: rate responses compress near the top
            hr = 82.0 + 8.0 * np.tanh((hr - 82.0) / 8.0)
        hr = max(hr, 40.0)
        depth = 0.06 * profile.hrv_scale * (1.0 - (1.0 - stress_depth_factor) * arousal)
        rr = (60.0 / hr) * (1.0 + depth * np.sin(2 * np.pi * RESP_MOD_HZ * t)
                            + jitter * rng.standard_normal())
        t += max(rr, 0.3)
    return np.asarray(times)


def _ecg_from_beats(beats: np.ndarray, n: int, fs: float) -> np.ndarray:
    ecg = np.zeros(n)
    t_axis = np.arange(n) / fs
    # (offset s, amplitude mV, width s) for P, Q, R, S, T bumps
    waves = [(-0.16, 0.10, 0.025), (-0.025, -0.12, 0.010), (0.0, 1.0, 0.010),
             (0.025, -0.18, 0.010), (0.25, 0.25, 0.050)]
    for beat in beats:
        for off, amp, width in waves:
            center = beat + off
            lo = max(0, int((center - 4 * width) * fs))
            hi = min(n, int((center + 4 * width) * fs) + 1)
            if lo >= hi:
                continue
            seg = t_axis[lo:hi] - center
            ecg[lo:hi] += amp * np.exp(-0.5 * (seg / width) ** 2)
    return ecg


def _scr_kernel(fs: float) -> np.ndarray:
    t = np.arange(0.0, 8.0, 1.0 / fs)
    k = np.exp(-t / SCR_DECAY_S) - np.exp(-t / SCR_RISE_S)
    return k / k.max()


def _gsr(profile: ParticipantProfile, duration: float, protocol: list[TaskInterval],
         rng: np.random.Generator) -> np.ndarray:
    n = int(np.ceil(duration * GSR_FS_HZ))
    t_axis = np.arange(n) / GSR_FS_HZ
    # person-specific response size and tonic stress rise; the rise is small
    # next to the tonic_base spread, so it only separates classes per person
    amp_scale = float(rng.uniform(0.8, 1.2))
    tonic_rise = float(rng.uniform(0.65, 0.85))
    tonic_wander = _slow_wander(rng)
    tonic_wander_amp = float(rng.uniform(1.2, 1.8))
    rate_wander = _slow_wander(rng)
    gsr = profile.tonic_base + tonic_wander_amp * tonic_wander(t_axis)
    arousal = np.array([_arousal(t, protocol) for t in t_axis])
    gsr += tonic_rise * arousal
    gsr = np.maximum(gsr, 0.05)
    kernel = _scr_kernel(GSR_FS_HZ)
    t = 0.0
    while t < duration:
        level = _arousal(t, protocol)
        rate = (profile.scr_rate_rest
                + (profile.scr_rate_stress - profile.scr_rate_rest) * level)
        rate_per_s = max(rate, 0.2) * float(np.exp(0.3 * rate_wander(t))) / 60.0
        t += float(rng.exponential(1.0 / rate_per_s))
        if t >= duration:
            break
        amp = amp_scale * float(rng.uniform(0.2, 0.6))
        i0 = int(t * GSR_FS_HZ)
        i1 = min(n, i0 + len(kernel))
        gsr[i0:i1] += amp * kernel[: i1 - i0]
    gsr += 0.005 * rng.standard_normal(n)
    return gsr


def gen_recording(
    profile: ParticipantProfile,
    protocol: list[TaskInterval],
    participant_id: str = "synth",
    dataset: str = "synthetic",
    ecg_snr_db: float | None = 30.0,
) -> tuple[Recording, RPeakSeries]:
    """Generate one recording plus its exact ground-truth beat times.

    ``ecg_snr_db`` sets seeded Gaussian noise relative to the clean ECG
    power; None produces a noise-free ECG.
    """
    profile.validate()
    ordered = sorted(protocol, key=lambda iv: iv.start_s)
    for a, b in zip(ordered, ordered[1:]):
        if b.start_s < a.end_s - 1e-9:
            raise ValueError("protocol intervals overlap")
    duration = max(iv.end_s for iv in protocol)
    rng = np.random.default_rng(profile.seed)

    beats = _beat_times(profile, duration, protocol, rng)
    n_ecg = int(np.ceil(duration * ECG_FS_HZ))
    ecg = _ecg_from_beats(beats, n_ecg, ECG_FS_HZ)
    if ecg_snr_db is not None:
        power = float(np.mean(ecg**2))
        noise_sd = np.sqrt(power / (10.0 ** (ecg_snr_db / 10.0)))
        ecg = ecg + noise_sd * rng.standard_normal(n_ecg)

    gsr = _gsr(profile, duration, protocol, rng)
    rec = Recording(
        participant_id,
        dataset,
        [SignalChannel("ecg", ECG_FS_HZ, ecg), SignalChannel("gsr_hand", GSR_FS_HZ, gsr)],
        list(protocol),
    )
    rec.validate()
    return rec, RPeakSeries(beats)


def gen_profile(rng: np.random.Generator, seed: int) -> ParticipantProfile:
    """Seeded person-specific physiology.

    Each channel's resting level is an independent draw, wide next to the
    within-person stress effects and uncorrelated with anything observable,
    so no cohort-level model can recover a person's anchors from a single
    window; a few labeled windows of that person measure them directly.
    """
    rest = float(np.exp(rng.uniform(np.log(1.5), np.log(7.0))))  # SCRs per min
    return ParticipantProfile(
        base_hr=float(rng.uniform(58.0, 82.0)),
        hr_stress_delta=float(rng.uniform(8.5, 9.5)),
        hrv_scale=float(np.exp(rng.uniform(-0.9, 0.9))),
        tonic_base=float(rng.uniform(3.0, 9.0)),
        scr_rate_stress=rest * float(rng.uniform(1.9, 2.1)),
        scr_rate_rest=rest,
        seed=seed,
    )


def gen_cohort(
    n: int, dataset_shape: str = "wesad", base_seed: int = 0
) -> list[tuple[Recording, RPeakSeries]]:
    """n participants with seeded person-specific profiles and Fig-style protocols."""
    if n < 2:
        raise ValueError("need n >= 2")
    if dataset_shape not in ("wesad", "drivedb"):
        raise ValueError(f"unknown shape {dataset_shape!r}")
    rng = np.random.default_rng(np.random.SeedSequence([base_seed, 0x73796E74]))
    out = []
    for i in range(n):
        profile = gen_profile(rng, seed=int(rng.integers(2**32)))
        if dataset_shape == "wesad":
            protocol = wesad_protocol(stress_first=(i % 2 == 1), rng=rng)
        else:
            protocol = drivedb_protocol(rng=rng)
        pid = f"p{i:02d}"
        out.append(gen_recording(profile, protocol, participant_id=pid))
    return out
