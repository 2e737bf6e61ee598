"""Spatiotemporal intensity features of ultrasound frames.

Each frame is tiled into non-overlapping square kernels (3 mm by default),
anchored at the top-left corner; partial kernels at the right and bottom
edges are discarded.  The mean 8-bit intensity of every kernel gives ``n``
features per frame, flattened row-major so index 0 is the most superficial,
left-most kernel.  Temporal features are the backward finite differences of
those means divided by the actual frame interval in seconds.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .errors import FrameTooSmall, InputError, MisalignedRows, ZeroTimeDelta
from .frames import FrameSequence

SD_FLOOR = 1e-8


class ChannelLayout(str, enum.Enum):
    INTENSITY_ONLY = "intensity_only"
    TEMPORAL_ONLY = "temporal_only"
    INTENSITY_THEN_TEMPORAL = "intensity_then_temporal"


@dataclass(frozen=True)
class FeatureConfig:
    kernel_size_mm: float = 3.0
    include_temporal: bool = True
    standardize: bool = True

    def __post_init__(self):
        if not self.kernel_size_mm > 0:
            raise InputError("kernel_size_mm must be > 0")


@dataclass(frozen=True)
class KernelGrid:
    kernel_px: int
    rows: int
    cols: int

    @property
    def n(self) -> int:
        return self.rows * self.cols

    @classmethod
    def for_frames(cls, height_px: int, width_px: int, pixel_spacing_mm: float,
                   kernel_size_mm: float) -> "KernelGrid":
        kernel_px = max(1, int(round(kernel_size_mm / pixel_spacing_mm)))
        rows, cols = height_px // kernel_px, width_px // kernel_px
        if rows == 0 or cols == 0:
            raise FrameTooSmall(
                f"{height_px}x{width_px} px frame cannot hold a {kernel_px} px kernel"
            )
        return cls(kernel_px, rows, cols)

    def flat_index(self, row: int, col: int) -> int:
        return row * self.cols + col


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (samples, dims)
    frame_indices: np.ndarray  # source frame of every row
    layout: ChannelLayout
    n_kernels: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InputError("feature values must be 2-D")
        idx = np.asarray(self.frame_indices, dtype=np.int64).ravel()
        if idx.size != values.shape[0]:
            raise InputError("one frame index per row required")
        expected = self.n_kernels * (2 if self.layout is ChannelLayout.INTENSITY_THEN_TEMPORAL else 1)
        if values.shape[1] != expected:
            raise InputError(f"{self.layout.value} expects {expected} dims, got {values.shape[1]}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "frame_indices", idx)

    @property
    def samples(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(self.values[rows], self.frame_indices[rows], self.layout, self.n_kernels)


def kernel_means(images: np.ndarray, grid: KernelGrid) -> np.ndarray:
    """Mean intensity of each kernel for a ``(T, H, W)`` stack -> ``(T, n)``."""
    k = grid.kernel_px
    t = images.shape[0]
    crop = images[:, : grid.rows * k, : grid.cols * k].astype(np.int64)
    sums = crop.reshape(t, grid.rows, k, grid.cols, k).sum(axis=(2, 4))
    return sums.reshape(t, grid.n) / float(k * k)


def extract_intensity_features(frames: FrameSequence, config: FeatureConfig = FeatureConfig()
                               ) -> tuple[FeatureMatrix, KernelGrid]:
    grid = KernelGrid.for_frames(
        frames.height_px, frames.width_px, frames.pixel_spacing_mm, config.kernel_size_mm
    )
    values = kernel_means(frames.images, grid)
    return (
        FeatureMatrix(values, np.arange(len(frames)), ChannelLayout.INTENSITY_ONLY, grid.n),
        grid,
    )


def compute_temporal_features(intensity: FeatureMatrix, timestamps_ms) -> FeatureMatrix:
    """Backward differences of the intensity rows per second.

    ``timestamps_ms`` holds one timestamp per intensity row.  Row ``t - 1`` of
    the output belongs to frame ``t`` (the later frame of the pair).
    """
    if intensity.layout is not ChannelLayout.INTENSITY_ONLY:
        raise InputError("temporal features are computed from an intensity-only block")
    ts = np.asarray(timestamps_ms, dtype=np.float64).ravel()
    if ts.size != intensity.samples:
        raise InputError("one timestamp per intensity row required")
    if intensity.samples < 2:
        raise InputError("at least 2 frames are needed for temporal features")
    dt = np.diff(ts) / 1000.0
    if np.any(dt == 0):
        raise ZeroTimeDelta(f"repeated timestamp at row {int(np.flatnonzero(dt == 0)[0]) + 1}")
    if np.any(dt < 0):
        raise InputError("timestamps must be strictly increasing")
    values = np.diff(intensity.values, axis=0) / dt[:, None]
    return FeatureMatrix(values, intensity.frame_indices[1:], ChannelLayout.TEMPORAL_ONLY,
                         intensity.n_kernels)


def assemble_feature_matrix(intensity: FeatureMatrix, temporal: FeatureMatrix | None,
                            config: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    if temporal is None or not config.include_temporal:
        return intensity
    if temporal.layout is not ChannelLayout.TEMPORAL_ONLY or temporal.n_kernels != intensity.n_kernels:
        raise MisalignedRows("temporal block does not match the intensity block")
    pos = {int(f): i for i, f in enumerate(intensity.frame_indices)}
    try:
        rows = np.array([pos[int(f)] for f in temporal.frame_indices], dtype=np.int64)
    except KeyError as exc:
        raise MisalignedRows(f"temporal row for frame {exc.args[0]} has no intensity row") from None
    values = np.hstack([intensity.values[rows], temporal.values])
    return FeatureMatrix(values, temporal.frame_indices, ChannelLayout.INTENSITY_THEN_TEMPORAL,
                         intensity.n_kernels)


def trial_features(frames: FrameSequence, config: FeatureConfig = FeatureConfig()
                   ) -> tuple[FeatureMatrix, KernelGrid]:
    """Intensity (and, if configured, temporal) features of a whole trial."""
    intensity, grid = extract_intensity_features(frames, config)
    temporal = None
    if config.include_temporal:
        temporal = compute_temporal_features(intensity, frames.timestamps_ms)
    return assemble_feature_matrix(intensity, temporal, config), grid


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, rows) -> "Standardization":
        x = np.asarray(getattr(rows, "values", rows), dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InputError("standardization needs a nonempty 2-D training block")
        mean = x.mean(axis=0)
        const = np.ptp(x, axis=0) == 0
        mean[const] = x[0, const]  # exact centre for constant columns
        return cls(mean, np.maximum(x.std(axis=0), SD_FLOOR))

    def apply(self, rows):
        if isinstance(rows, FeatureMatrix):
            return FeatureMatrix((rows.values - self.mean) / self.sd, rows.frame_indices,
                                 rows.layout, rows.n_kernels)
        return (np.asarray(rows, dtype=np.float64) - self.mean) / self.sd


def standardize(train_rows, apply_rows):
    """Z-score ``apply_rows`` with statistics of ``train_rows`` (population SD)."""
    st = Standardization.fit(train_rows)
    return st, st.apply(apply_rows)


def write_feature_csv(path, fm: FeatureMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index"] + [f"f{j}" for j in range(fm.dims)])
        for idx, row in zip(fm.frame_indices, fm.values):
            w.writerow([int(idx)] + [repr(float(v)) for v in row])


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(frame_indices, values)`` from a feature CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1:]
