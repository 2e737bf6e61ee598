"""Stride segmentation, time normalization and trajectory bands."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, InputError, InsufficientEvents, TooFewSamples
from .frames import Annotation, Task, TrialRecord, synchronize_kinematics

logger = logging.getLogger(__name__)

GRID_POINTS = 101
PERCENT_GRID = np.linspace(0.0, 100.0, GRID_POINTS)


class StrideLabel(str, enum.Enum):
    STEADY_STATE = "steady_state"
    WALK_TO_STAIR = "walk_to_stair"
    STAIR_TO_WALK = "stair_to_walk"


_LABEL_OF = {
    Annotation.WALK_TO_STAIR: StrideLabel.WALK_TO_STAIR,
    Annotation.STAIR_TO_WALK: StrideLabel.STAIR_TO_WALK,
}


@dataclass(frozen=True)
class Stride:
    subject_id: str
    task: Task
    trial_index: int
    number: int  # position among the trial's heel-strike pairs
    start_ms: int
    end_ms: int
    label: StrideLabel
    sample_rows: np.ndarray

    @property
    def stride_id(self) -> tuple[str, str, int, int]:
        return (self.subject_id, self.task.value, self.trial_index, self.number)

    def __len__(self) -> int:
        return self.sample_rows.size


def segment_strides(trial: TrialRecord, sample_timestamps_ms=None) -> list[Stride]:
    """Split a trial into heel-strike to heel-strike strides.

    ``sample_timestamps_ms`` are the timestamps of the trial's analysis rows
    (defaults to the frames retained by :func:`synchronize_kinematics`).  A
    stride owns the rows with ``start_ms <= t < end_ms``; strides without rows
    are dropped and counted in a log warning.
    """
    hs = trial.heel_strikes_ms
    if hs.size < 2:
        raise InsufficientEvents(f"{trial.key}: {hs.size} heel-strike(s), need 2")
    if sample_timestamps_ms is None:
        sample_timestamps_ms = synchronize_kinematics(trial).timestamps_ms
    ts = np.asarray(sample_timestamps_ms, dtype=np.int64)

    strides, empty = [], 0
    for k in range(hs.size - 1):
        start, end = int(hs[k]), int(hs[k + 1])
        label = StrideLabel.STEADY_STATE
        for e in trial.events:
            if start <= e.timestamp_ms < end and e.annotation is not Annotation.NONE:
                label = _LABEL_OF[e.annotation]
                break
        lo, hi = np.searchsorted(ts, [start, end], side="left")
        if hi <= lo:
            empty += 1
            continue
        strides.append(Stride(trial.subject_id, trial.task, trial.trial_index, k,
                              start, end, label, np.arange(lo, hi)))
    if empty:
        logger.warning("%s: dropped %d stride(s) without synchronized samples", trial.key, empty)
    return strides


@dataclass(frozen=True)
class NormalizedStride:
    percent: np.ndarray
    values: np.ndarray
    label: StrideLabel = StrideLabel.STEADY_STATE


def normalize_stride(stride: Stride, times_ms, values) -> NormalizedStride:
    """Resample a timestamped signal on 101 points spanning the stride.

    The full signal is used for interpolation so the stride endpoints are
    interpolated between their true neighbours rather than extrapolated.
    """
    t = np.asarray(times_ms, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    inside = np.count_nonzero((t >= stride.start_ms) & (t <= stride.end_ms))
    if inside < 2:
        raise TooFewSamples(f"stride {stride.stride_id}: {inside} sample(s) inside")
    grid_t = stride.start_ms + (stride.end_ms - stride.start_ms) * PERCENT_GRID / 100.0
    return NormalizedStride(PERCENT_GRID.copy(), np.interp(grid_t, t, v), stride.label)


@dataclass(frozen=True)
class TrajectoryBand:
    percent: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    count: int


def trajectory_band(strides: Sequence[NormalizedStride]) -> TrajectoryBand:
    """Pointwise mean and population SD across normalized strides."""
    if not strides:
        raise EmptyInput("no strides to average")
    grid = strides[0].percent
    for s in strides[1:]:
        if s.percent.shape != grid.shape or not np.array_equal(s.percent, grid):
            raise InputError("strides are on different grids")
    stack = np.vstack([s.values for s in strides])
    return TrajectoryBand(grid.copy(), stack.mean(axis=0), stack.std(axis=0), len(strides))


def transition_triplets(strides: Sequence[Stride]) -> list[tuple[Stride | None, Stride | None, Stride | None]]:
    """Group a trial's strides into (walk-to-stair, steady, stair-to-walk).

    Each walk-to-stair stride starts a triplet; the stride right after it is
    the steady member if labelled steady-state, and the next stair-to-walk
    stride closes it.  Missing members are ``None``.
    """
    ordered = sorted(strides, key=lambda s: (s.subject_id, s.task.value, s.trial_index, s.number))
    out = []
    for i, s in enumerate(ordered):
        if s.label is not StrideLabel.WALK_TO_STAIR:
            continue
        same = [o for o in ordered[i + 1:] if (o.subject_id, o.trial_index, o.task) ==
                (s.subject_id, s.trial_index, s.task)]
        steady = None
        if same and same[0].number == s.number + 1 and same[0].label is StrideLabel.STEADY_STATE:
            steady = same[0]
        closing = None
        for o in same:
            if o.label is StrideLabel.WALK_TO_STAIR:
                break
            if o.label is StrideLabel.STAIR_TO_WALK:
                closing = o
                break
        out.append((s, steady, closing))
    return out


def triplet_band(members: Iterable[Sequence[NormalizedStride | None]]) -> TrajectoryBand:
    """Band on the [-100, 200] percent axis for (w2s, steady, s2w) triplets.

    Shared boundary points are kept once, from the later segment.  Segments
    with no strides at all are left out (a gap on the axis).
    """
    members = list(members)
    pieces_p, pieces_m, pieces_s = [], [], []
    count = 0
    for slot, offset in enumerate((-100.0, 0.0, 100.0)):
        group = [m[slot] for m in members if m[slot] is not None]
        if not group:
            continue
        band = trajectory_band(group)
        count = max(count, band.count)
        keep = slice(None) if slot == 2 else slice(0, GRID_POINTS - 1)
        pieces_p.append(band.percent[keep] + offset)
        pieces_m.append(band.mean[keep])
        pieces_s.append(band.sd[keep])
    if not pieces_p:
        raise EmptyInput("no transition strides")
    return TrajectoryBand(np.concatenate(pieces_p), np.concatenate(pieces_m),
                          np.concatenate(pieces_s), count)


BAND_HEADER = ("series", "percent", "mean", "sd")


def write_bands_csv(path, bands: dict[str, TrajectoryBand]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BAND_HEADER)
        for name, band in bands.items():
            for p, m, s in zip(band.percent, band.mean, band.sd):
                w.writerow([name, f"{p:g}", f"{m:.6f}", f"{s:.6f}"])
