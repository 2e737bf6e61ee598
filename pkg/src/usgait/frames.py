"""Trial data model, on-disk formats and kinematics synchronization.

A trial is one continuous recording: a stack of B-mode frames (8-bit,
row 0 = most superficial tissue), the gait events of the instrumented leg
and the reference knee kinematics.  Three files describe it on disk:

* ``*.uskf``  binary frame container (little-endian)::

      b"USKF" | version u16 | width u16 | height u16
             | pixel_spacing_um u32 | frame_count u32
      then per frame: timestamp_ms u64 | width*height bytes (row-major)

* events CSV      ``timestamp_ms,kind,annotation``
* kinematics CSV  ``timestamp_ms,knee_angle_deg,knee_velocity_deg_s``

A manifest CSV (``subject_id,task,trial_index,frames_path,events_path,
kinematics_path``) lists the trials of a cohort; relative paths are
resolved against the manifest's directory.
"""

from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    EmptyTrial,
    InputError,
    MagicMismatch,
    MalformedRow,
    NonMonotonicTimestamps,
    NoOverlap,
    TruncatedFrameData,
    UnsupportedVersion,
)

MAGIC = b"USKF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHHII")

#: frames whose bracketing kinematics samples are further apart are dropped
MAX_SYNC_GAP_MS = 50
#: accepted mean inter-frame gap for a nominal 20 Hz stream
FRAME_GAP_RANGE_MS = (25.0, 100.0)

EVENTS_HEADER = ("timestamp_ms", "kind", "annotation")
KINEMATICS_HEADER = ("timestamp_ms", "knee_angle_deg", "knee_velocity_deg_s")
MANIFEST_HEADER = (
    "subject_id",
    "task",
    "trial_index",
    "frames_path",
    "events_path",
    "kinematics_path",
)


class Task(str, enum.Enum):
    LEVEL = "level"
    INCLINE = "incline"
    DECLINE = "decline"
    STAIR_ASCENT = "stair_ascent"
    STAIR_DESCENT = "stair_descent"

    @property
    def is_stair(self) -> bool:
        return self in (Task.STAIR_ASCENT, Task.STAIR_DESCENT)


TASKS = tuple(Task)
TREADMILL_TASKS = (Task.LEVEL, Task.INCLINE, Task.DECLINE)
STAIR_TASKS = (Task.STAIR_ASCENT, Task.STAIR_DESCENT)


class EventKind(str, enum.Enum):
    HEEL_STRIKE = "heel_strike"
    TOE_OFF = "toe_off"


class Annotation(str, enum.Enum):
    NONE = "none"
    WALK_TO_STAIR = "walk_to_stair"
    STAIR_TO_WALK = "stair_to_walk"


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class UltrasoundFrame:
    timestamp_ms: int
    width_px: int
    height_px: int
    pixel_spacing_mm: float
    intensities: np.ndarray  # flat, row-major, uint8

    def __post_init__(self):
        object.__setattr__(self, "intensities", _frozen(self.intensities, np.uint8).ravel())
        if self.width_px <= 0 or self.height_px <= 0:
            raise InputError("frame dimensions must be positive")
        if not self.pixel_spacing_mm > 0:
            raise InputError("pixel_spacing_mm must be > 0")
        if self.intensities.size != self.width_px * self.height_px:
            raise InputError(
                f"expected {self.width_px * self.height_px} intensities, "
                f"got {self.intensities.size}"
            )

    @property
    def image(self) -> np.ndarray:
        return self.intensities.reshape(self.height_px, self.width_px)


@dataclass(frozen=True)
class FrameSequence:
    """Frames of one trial stored as a ``(T, height, width)`` uint8 stack."""

    timestamps_ms: np.ndarray
    images: np.ndarray
    pixel_spacing_mm: float

    def __post_init__(self):
        ts = _frozen(self.timestamps_ms, np.int64).ravel()
        images = _frozen(self.images, np.uint8)
        if images.ndim != 3:
            raise InputError("images must have shape (frames, height, width)")
        if images.shape[0] != ts.size:
            raise InputError(
                f"{images.shape[0]} images but {ts.size} timestamps"
            )
        if not self.pixel_spacing_mm > 0:
            raise InputError("pixel_spacing_mm must be > 0")
        object.__setattr__(self, "timestamps_ms", ts)
        object.__setattr__(self, "images", images)

    @classmethod
    def from_frames(cls, frames: Sequence[UltrasoundFrame]) -> "FrameSequence":
        if not frames:
            raise EmptyTrial("no frames")
        first = frames[0]
        for f in frames:
            if (f.width_px, f.height_px) != (first.width_px, first.height_px):
                raise InputError("frames differ in size")
            if f.pixel_spacing_mm != first.pixel_spacing_mm:
                raise InputError("frames differ in pixel spacing")
        return cls(
            np.array([f.timestamp_ms for f in frames]),
            np.stack([f.image for f in frames]),
            first.pixel_spacing_mm,
        )

    @property
    def height_px(self) -> int:
        return self.images.shape[1]

    @property
    def width_px(self) -> int:
        return self.images.shape[2]

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> UltrasoundFrame:
        return UltrasoundFrame(
            int(self.timestamps_ms[i]),
            self.width_px,
            self.height_px,
            self.pixel_spacing_mm,
            self.images[i],
        )

    def __iter__(self) -> Iterator[UltrasoundFrame]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class GaitEvent:
    timestamp_ms: int
    kind: EventKind
    annotation: Annotation = Annotation.NONE


class KinematicsSample(NamedTuple):
    timestamp_ms: int
    knee_angle_deg: float
    knee_velocity_deg_s: float


@dataclass(frozen=True)
class Kinematics:
    """Reference knee kinematics as parallel arrays."""

    timestamps_ms: np.ndarray
    angle_deg: np.ndarray
    velocity_deg_s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps_ms", _frozen(self.timestamps_ms, np.int64).ravel())
        object.__setattr__(self, "angle_deg", _frozen(self.angle_deg, np.float64).ravel())
        object.__setattr__(self, "velocity_deg_s", _frozen(self.velocity_deg_s, np.float64).ravel())
        n = self.timestamps_ms.size
        if self.angle_deg.size != n or self.velocity_deg_s.size != n:
            raise InputError("kinematics arrays differ in length")

    @classmethod
    def from_samples(cls, samples: Sequence[KinematicsSample]) -> "Kinematics":
        arr = np.array(samples, dtype=np.float64).reshape(-1, 3)
        return cls(arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2])

    def __len__(self) -> int:
        return self.timestamps_ms.size

    def __iter__(self) -> Iterator[KinematicsSample]:
        for t, a, v in zip(self.timestamps_ms, self.angle_deg, self.velocity_deg_s):
            yield KinematicsSample(int(t), float(a), float(v))


def _strictly_increasing(ts) -> bool:
    ts = np.asarray(ts)
    return bool(np.all(np.diff(ts) > 0))


@dataclass(frozen=True)
class TrialRecord:
    subject_id: str
    task: Task
    trial_index: int
    frames: FrameSequence
    events: tuple[GaitEvent, ...]
    kinematics: Kinematics

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "events", tuple(self.events))
        if not _strictly_increasing(self.frames.timestamps_ms):
            raise NonMonotonicTimestamps(f"{self.key}: frame timestamps not strictly increasing")
        if not _strictly_increasing([e.timestamp_ms for e in self.events]):
            raise NonMonotonicTimestamps(f"{self.key}: event timestamps not strictly increasing")
        if not _strictly_increasing(self.kinematics.timestamps_ms):
            raise NonMonotonicTimestamps(f"{self.key}: kinematics timestamps not strictly increasing")

    @property
    def key(self) -> str:
        return f"{self.subject_id}/{self.task.value}/{self.trial_index}"

    @property
    def heel_strikes_ms(self) -> np.ndarray:
        return np.array(
            [e.timestamp_ms for e in self.events if e.kind is EventKind.HEEL_STRIKE],
            dtype=np.int64,
        )


# ---------------------------------------------------------------- frame I/O


def write_frames(path, frames: FrameSequence) -> None:
    spacing_um = int(round(frames.pixel_spacing_mm * 1000))
    if spacing_um <= 0:
        raise InputError("pixel spacing rounds to 0 micrometers")
    rec = np.empty(
        len(frames),
        dtype=[("ts", "<u8"), ("px", "u1", (frames.height_px * frames.width_px,))],
    )
    rec["ts"] = frames.timestamps_ms
    rec["px"] = frames.images.reshape(len(frames), -1)
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                MAGIC, FORMAT_VERSION, frames.width_px, frames.height_px,
                spacing_um, len(frames),
            )
        )
        fh.write(rec.tobytes())


def read_frames(path) -> FrameSequence:
    """Read a frame container; frames are returned sorted by timestamp."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFrameData(f"{path}: file shorter than header")
    magic, version, width, height, spacing_um, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MagicMismatch(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format version {version}")
    if width == 0 or height == 0 or spacing_um == 0:
        raise InputError(f"{path}: zero width, height or pixel spacing")
    if count == 0:
        raise EmptyTrial(f"{path}: no frames")
    stride = 8 + width * height
    body = len(data) - _HEADER.size
    if body < count * stride:
        raise TruncatedFrameData(
            f"{path}: header declares {count} frames, data holds {body // stride} "
            f"(+{body % stride} bytes)"
        )
    if body > count * stride:
        raise InputError(f"{path}: {body - count * stride} trailing bytes")
    rec = np.frombuffer(
        data, dtype=[("ts", "<u8"), ("px", "u1", (width * height,))],
        count=count, offset=_HEADER.size,
    )
    ts = rec["ts"].astype(np.int64)
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    if np.any(np.diff(ts) == 0):
        dup = int(ts[np.flatnonzero(np.diff(ts) == 0)[0]])
        raise NonMonotonicTimestamps(f"{path}: duplicate frame timestamp {dup}")
    images = rec["px"][order].reshape(count, height, width)
    return FrameSequence(ts, images, spacing_um / 1000.0)


# ------------------------------------------------------------------ CSV I/O


def _read_csv(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise MalformedRow(f"{path}:1: empty file, expected header") from None
        if tuple(h.strip() for h in got) != tuple(header):
            raise MalformedRow(f"{path}:1: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            yield lineno, [c.strip() for c in row]


def _check_increasing(path, ts, lines):
    for i in range(1, len(ts)):
        if ts[i] <= ts[i - 1]:
            raise NonMonotonicTimestamps(
                f"{path}:{lines[i]}: timestamp {ts[i]} does not follow {ts[i - 1]}"
            )


def read_events(path) -> tuple[GaitEvent, ...]:
    events, lines = [], []
    for lineno, (ts, kind, ann) in _read_csv(path, EVENTS_HEADER):
        try:
            events.append(GaitEvent(int(ts), EventKind(kind), Annotation(ann)))
        except ValueError as exc:
            raise MalformedRow(f"{path}:{lineno}: {exc}") from None
        lines.append(lineno)
    _check_increasing(path, [e.timestamp_ms for e in events], lines)
    return tuple(events)


def write_events(path, events: Sequence[GaitEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENTS_HEADER)
        for e in events:
            w.writerow([e.timestamp_ms, e.kind.value, e.annotation.value])


def read_kinematics(path) -> Kinematics:
    rows, lines = [], []
    for lineno, (ts, ang, vel) in _read_csv(path, KINEMATICS_HEADER):
        try:
            row = (int(ts), float(ang), float(vel))
        except ValueError as exc:
            raise MalformedRow(f"{path}:{lineno}: {exc}") from None
        if not (np.isfinite(row[1]) and np.isfinite(row[2])):
            raise MalformedRow(f"{path}:{lineno}: non-finite kinematics value")
        rows.append(row)
        lines.append(lineno)
    if not rows:
        raise EmptyTrial(f"{path}: no kinematics samples")
    _check_increasing(path, [r[0] for r in rows], lines)
    arr = np.array(rows, dtype=np.float64)
    return Kinematics(arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2])


def write_kinematics(path, kin: Kinematics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KINEMATICS_HEADER)
        for t, a, v in zip(kin.timestamps_ms, kin.angle_deg, kin.velocity_deg_s):
            w.writerow([int(t), repr(float(a)), repr(float(v))])


def load_trial(frame_path, events_path, kinematics_path,
               subject_id: str, task, trial_index: int) -> TrialRecord:
    """Load and validate one trial from its three files."""
    frames = read_frames(frame_path)
    events = read_events(events_path)
    kinematics = read_kinematics(kinematics_path)
    return TrialRecord(str(subject_id), Task(task), int(trial_index), frames, events, kinematics)


def write_trial(trial: TrialRecord, directory, stem: str | None = None) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{trial.subject_id}_{trial.task.value}_{trial.trial_index}"
    paths = {
        "frames_path": directory / f"{stem}.uskf",
        "events_path": directory / f"{stem}_events.csv",
        "kinematics_path": directory / f"{stem}_kinematics.csv",
    }
    write_frames(paths["frames_path"], trial.frames)
    write_events(paths["events_path"], trial.events)
    write_kinematics(paths["kinematics_path"], trial.kinematics)
    return paths


# ----------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    task: Task
    trial_index: int
    frames_path: Path
    events_path: Path
    kinematics_path: Path

    def load(self) -> TrialRecord:
        return load_trial(
            self.frames_path, self.events_path, self.kinematics_path,
            self.subject_id, self.task, self.trial_index,
        )


def read_manifest(path) -> list[ManifestEntry]:
    base = Path(path).parent
    out = []
    for lineno, (sid, task, idx, fp, ep, kp) in _read_csv(path, MANIFEST_HEADER):
        try:
            out.append(ManifestEntry(sid, Task(task), int(idx), base / fp, base / ep, base / kp))
        except ValueError as exc:
            raise MalformedRow(f"{path}:{lineno}: {exc}") from None
    return out


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    base = Path(path).parent.resolve()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in entries:
            rel = [Path(p).resolve().relative_to(base).as_posix()
                   for p in (e.frames_path, e.events_path, e.kinematics_path)]
            w.writerow([e.subject_id, e.task.value, e.trial_index, *rel])


# ---------------------------------------------------------- synchronization


@dataclass(frozen=True)
class SyncResult:
    frame_indices: np.ndarray
    angle_deg: np.ndarray
    velocity_deg_s: np.ndarray
    timestamps_ms: np.ndarray
    dropped: tuple[tuple[int, str], ...] = field(default=())

    def __len__(self) -> int:
        return self.frame_indices.size

    def rows(self) -> list[tuple[int, float, float]]:
        return [(int(i), float(a), float(v))
                for i, a, v in zip(self.frame_indices, self.angle_deg, self.velocity_deg_s)]


def synchronize_kinematics(trial: TrialRecord, max_gap_ms: int = MAX_SYNC_GAP_MS) -> SyncResult:
    """Linearly interpolate angle and velocity at every frame timestamp.

    A frame is dropped when it lies outside the kinematics span or when
    either kinematics sample bracketing it is more than ``max_gap_ms`` away
    from the frame (exact hits are always kept).
    """
    kt = trial.kinematics.timestamps_ms
    ft = trial.frames.timestamps_ms
    if len(kt) == 0 or len(ft) == 0:
        raise EmptyTrial(f"{trial.key}: nothing to synchronize")
    if ft[-1] < kt[0] or ft[0] > kt[-1]:
        raise NoOverlap(
            f"{trial.key}: frames [{ft[0]}, {ft[-1]}] ms vs kinematics [{kt[0]}, {kt[-1]}] ms"
        )
    hi = np.searchsorted(kt, ft, side="left")
    exact = (hi < kt.size) & (kt[np.minimum(hi, kt.size - 1)] == ft)
    inside = (ft >= kt[0]) & (ft <= kt[-1])
    lo = np.clip(hi - 1, 0, kt.size - 1)
    hi_c = np.clip(hi, 0, kt.size - 1)
    gap = kt[hi_c] - kt[lo]
    reach = np.maximum(kt[hi_c] - ft, ft - kt[lo])
    keep = inside & (exact | (reach <= max_gap_ms))

    dropped = []
    for i in np.flatnonzero(~keep):
        if not inside[i]:
            dropped.append((int(i), "outside kinematics span"))
        else:
            dropped.append((int(i), f"kinematics gap of {int(gap[i])} ms "
                                    f"({int(reach[i])} ms from the frame)"))

    idx = np.flatnonzero(keep)
    t = ft[idx].astype(np.float64)
    ktf = kt.astype(np.float64)
    return SyncResult(
        idx,
        np.interp(t, ktf, trial.kinematics.angle_deg),
        np.interp(t, ktf, trial.kinematics.velocity_deg_s),
        ft[idx],
        tuple(dropped),
    )


# --------------------------------------------------------------- validation


@dataclass(frozen=True)
class ValidationReport:
    trial_key: str
    violations: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.passed


def validate_trial(trial: TrialRecord) -> ValidationReport:
    problems = []
    fr = trial.frames
    if len(fr) == 0:
        problems.append("no frames")
    if not _strictly_increasing(fr.timestamps_ms):
        problems.append("frame timestamps not strictly increasing")
    if not fr.pixel_spacing_mm > 0:
        problems.append("pixel spacing must be positive")
    if not _strictly_increasing([e.timestamp_ms for e in trial.events]):
        problems.append("event timestamps not strictly increasing")
    if len(trial.kinematics) == 0:
        problems.append("no kinematics samples")
    elif not _strictly_increasing(trial.kinematics.timestamps_ms):
        problems.append("kinematics timestamps not strictly increasing")
    if trial.heel_strikes_ms.size < 2:
        problems.append("insufficient gait events: fewer than 2 heel-strikes")
    if len(fr) >= 2:
        mean_gap = float(np.mean(np.diff(fr.timestamps_ms)))
        lo, hi = FRAME_GAP_RANGE_MS
        if not lo <= mean_gap <= hi:
            problems.append(
                f"frame rate out of range: mean inter-frame gap {mean_gap:.1f} ms "
                f"outside [{lo:g}, {hi:g}]"
            )
    if len(fr) and len(trial.kinematics):
        kt = trial.kinematics.timestamps_ms
        if fr.timestamps_ms[-1] < kt[0] or fr.timestamps_ms[0] > kt[-1]:
            problems.append("frames do not overlap the kinematics span")
    return ValidationReport(trial.key, tuple(problems))
