"""Canonical on-disk recording format, loading/validation, and windowing.

A recording lives in its own directory:

* ``manifest.json`` -- participant id, dataset kind, channel table, and the
  name of the intervals file.
* one plain-text file per channel, one decimal sample per line (sample ``i``
  is at time ``i / sample_rate_hz``).
* an intervals CSV with header ``label,start_s,end_s``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHANNEL_NAMES = ("ecg", "gsr_hand", "gsr_foot")
DATASETS = ("wesad", "drivedb", "synthetic")
TASK_LABELS = (
    "baseline",
    "stress",
    "amusement",
    "meditation",
    "rest",
    "city1",
    "city2",
    "city3",
    "highway1",
    "highway2",
    "unlabeled",
)

POSITIVE = "positive"
NEGATIVE = "negative"
EXCLUDED = "excluded"


class LoadError(Exception):
    """A required file is missing or unreadable."""


class ValidationError(ValueError):
    """A loaded value violates the format contract; names the offending field."""

    def __init__(self, fieldname: str, message: str):
        self.field = fieldname
        super().__init__(f"{fieldname}: {message}")


@dataclass
class SignalChannel:
    name: str
    sample_rate_hz: float
    samples: np.ndarray

    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def validate(self) -> None:
        if self.name not in CHANNEL_NAMES:
            raise ValidationError("channel.name", f"unknown channel {self.name!r}")
        if not (self.sample_rate_hz > 0):
            raise ValidationError("channel.sample_rate_hz", "must be > 0")
        if len(self.samples) == 0:
            raise ValidationError("channel.samples", f"{self.name}: empty")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("channel.samples", f"{self.name}: non-finite sample")


@dataclass
class TaskInterval:
    label: str
    start_s: float
    end_s: float

    def validate(self) -> None:
        if self.label not in TASK_LABELS:
            raise ValidationError("interval.label", f"unknown label {self.label!r}")
        if not (0 <= self.start_s < self.end_s):
            raise ValidationError(
                "interval.start_s", f"need 0 <= start < end, got [{self.start_s}, {self.end_s}]"
            )


@dataclass
class Recording:
    participant_id: str
    dataset: str
    channels: list[SignalChannel]
    intervals: list[TaskInterval]

    def duration_s(self) -> float:
        """Usable duration: the shortest channel bounds every window."""
        return min(c.duration_s() for c in self.channels)

    def channel(self, name: str) -> SignalChannel | None:
        for c in self.channels:
            if c.name == name:
                return c
        return None

    def ecg(self) -> SignalChannel:
        return self.channel("ecg")

    def gsr(self) -> SignalChannel:
        """Preferred GSR channel: hand over foot."""
        return self.channel("gsr_hand") or self.channel("gsr_foot")

    def validate(self) -> None:
        if not self.participant_id:
            raise ValidationError("participant_id", "empty")
        if self.dataset not in DATASETS:
            raise ValidationError("dataset", f"unknown dataset {self.dataset!r}")
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ValidationError("channels", "duplicate channel name")
        for c in self.channels:
            c.validate()
        if names.count("ecg") != 1:
            raise ValidationError("channels", "need exactly one ecg channel")
        if "gsr_hand" not in names and "gsr_foot" not in names:
            raise ValidationError("channels", "need at least one gsr channel")
        dur = self.duration_s()
        for iv in self.intervals:
            iv.validate()
            if iv.end_s > dur + 1e-9:
                raise ValidationError(
                    "interval.end_s", f"{iv.label} ends at {iv.end_s}s, beyond signal ({dur:.3f}s)"
                )
        ordered = sorted(self.intervals, key=lambda iv: iv.start_s)
        for a, b in zip(ordered, ordered[1:]):
            if b.start_s < a.end_s - 1e-9:
                raise ValidationError(
                    "intervals", f"{a.label} [{a.start_s},{a.end_s}] overlaps {b.label} [{b.start_s},{b.end_s}]"
                )


@dataclass
class WindowSpec:
    length_s: float = 40.0
    step_s: float = 20.0

    def validate(self) -> None:
        if not (0 < self.step_s <= self.length_s):
            raise ValidationError("window_spec", "need 0 < step_s <= length_s")


def default_label_map(rest_negative: bool = False) -> dict[str, str]:
    """Task label -> {positive, negative, excluded}.

    Stress and city driving are positive; baseline, amusement and highway
    driving are negative. Meditation and rest default to excluded from both
    training and testing; ``rest_negative`` folds them into the negative class.
    """
    calm = NEGATIVE if rest_negative else EXCLUDED
    return {
        "baseline": NEGATIVE,
        "stress": POSITIVE,
        "amusement": NEGATIVE,
        "meditation": calm,
        "rest": calm,
        "city1": POSITIVE,
        "city2": POSITIVE,
        "city3": POSITIVE,
        "highway1": NEGATIVE,
        "highway2": NEGATIVE,
        "unlabeled": EXCLUDED,
    }


@dataclass
class Window:
    start_s: float
    end_s: float
    label: int
    source_label: str


def make_windows(
    rec: Recording, spec: WindowSpec | None = None, label_map: dict[str, str] | None = None
) -> list[Window]:
    """Segment a recording into fixed windows with majority-vote binary labels.

    Windows start at 0, step_s, 2*step_s, ... while they fit entirely within
    the recording. A window's label is the class (positive/negative) owning
    the largest share of its class-mapped time; excluded and unlabeled time
    does not vote. Windows with zero voting time, or with an exact
    positive/negative tie, are dropped. ``source_label`` is the single task
    label covering the most window time, used for context selection.
    """
    spec = spec or WindowSpec()
    spec.validate()
    label_map = label_map if label_map is not None else default_label_map()
    duration = rec.duration_s()

    windows: list[Window] = []
    start = 0.0
    k = 0
    while start + spec.length_s <= duration + 1e-9:
        end = start + spec.length_s
        pos_t = 0.0
        neg_t = 0.0
        share: dict[str, float] = {}
        for iv in rec.intervals:
            overlap = min(end, iv.end_s) - max(start, iv.start_s)
            if overlap <= 0:
                continue
            share[iv.label] = share.get(iv.label, 0.0) + overlap
            cls = label_map.get(iv.label, EXCLUDED)
            if cls == POSITIVE:
                pos_t += overlap
            elif cls == NEGATIVE:
                neg_t += overlap
        if pos_t + neg_t > 0 and not math.isclose(pos_t, neg_t, rel_tol=0.0, abs_tol=1e-9):
            source = max(share.items(), key=lambda kv: kv[1])[0]
            windows.append(Window(start, end, int(pos_t > neg_t), source))
        k += 1
        start = k * spec.step_s
    return windows


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------


def load_recording(dir_path: str | Path) -> Recording:
    """Load and validate one canonical recording directory."""
    dir_path = Path(dir_path)
    manifest_path = dir_path / "manifest.json"
    if not manifest_path.is_file():
        raise LoadError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise LoadError(f"unparseable manifest {manifest_path}: {e}") from e

    for key in ("participant_id", "dataset", "channels", "intervals_file"):
        if key not in manifest:
            raise ValidationError(key, "missing from manifest")

    channels = []
    for entry in manifest["channels"]:
        for key in ("name", "file", "sample_rate_hz"):
            if key not in entry:
                raise ValidationError(f"channels[].{key}", "missing from manifest")
        ch_path = dir_path / entry["file"]
        if not ch_path.is_file():
            raise LoadError(f"missing channel file: {ch_path}")
        try:
            samples = np.loadtxt(ch_path, dtype=np.float64, ndmin=1)
        except ValueError as e:
            raise ValidationError("channel.samples", f"{entry['file']}: {e}") from e
        channels.append(SignalChannel(entry["name"], float(entry["sample_rate_hz"]), samples))

    iv_path = dir_path / manifest["intervals_file"]
    if not iv_path.is_file():
        raise LoadError(f"missing intervals file: {iv_path}")
    intervals = _read_intervals(iv_path)

    rec = Recording(str(manifest["participant_id"]), manifest["dataset"], channels, intervals)
    rec.validate()
    return rec


def _read_intervals(path: Path) -> list[TaskInterval]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["label", "start_s", "end_s"]:
            raise ValidationError("intervals_file", f"bad header {header!r}")
        out = []
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError("intervals_file", f"bad row {row!r}")
            try:
                out.append(TaskInterval(row[0], float(row[1]), float(row[2])))
            except ValueError as e:
                raise ValidationError("intervals_file", f"bad row {row!r}: {e}") from e
    return out


def write_recording(rec: Recording, dir_path: str | Path) -> Path:
    """Write a recording in the canonical directory format (full precision)."""
    rec.validate()
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "participant_id": rec.participant_id,
        "dataset": rec.dataset,
        "channels": [
            {"name": c.name, "file": f"{c.name}.txt", "sample_rate_hz": c.sample_rate_hz}
            for c in rec.channels
        ],
        "intervals_file": "intervals.csv",
    }
    (dir_path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for c in rec.channels:
        with open(dir_path / f"{c.name}.txt", "w") as fh:
            fh.write("\n".join(repr(float(v)) for v in c.samples))
            fh.write("\n")
    with open(dir_path / "intervals.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "start_s", "end_s"])
        for iv in rec.intervals:
            writer.writerow([iv.label, repr(float(iv.start_s)), repr(float(iv.end_s))])
    return dir_path


def validate_recording_dir(dir_path: str | Path) -> list[str]:
    """Schema-check one recording directory; returns a list of error strings."""
    try:
        load_recording(dir_path)
    except (LoadError, ValidationError) as e:
        return [str(e)]
    return []
