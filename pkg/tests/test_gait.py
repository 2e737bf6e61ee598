import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_trial
from usgait.errors import EmptyInput, InsufficientEvents, TooFewSamples
from usgait.frames import Annotation, Task
from usgait.gait import (
    GRID_POINTS,
    NormalizedStride,
    Stride,
    StrideLabel,
    normalize_stride,
    segment_strides,
    trajectory_band,
    transition_triplets,
    triplet_band,
    write_bands_csv,
)


def _stride(start, end, label=StrideLabel.STEADY_STATE, number=0, trial=0):
    return Stride("S01", Task.STAIR_ASCENT, trial, number, start, end, label, np.arange(1))


def test_two_strides_partition_frames(trial):
    strides = segment_strides(trial)
    assert [(s.start_ms, s.end_ms) for s in strides] == [(0, 1000), (1000, 2000)]
    assert [len(s) for s in strides] == [20, 20]  # frame at 2000 ms belongs to neither
    assert all(s.label is StrideLabel.STEADY_STATE for s in strides)


def test_transition_labels():
    t = make_trial(heel_strikes=[0, 500, 1000, 1500, 2000],
                   annotations={500: Annotation.WALK_TO_STAIR, 1500: Annotation.STAIR_TO_WALK})
    labels = [s.label for s in segment_strides(t)]
    assert labels == [StrideLabel.STEADY_STATE, StrideLabel.WALK_TO_STAIR,
                      StrideLabel.STEADY_STATE, StrideLabel.STAIR_TO_WALK]


def test_insufficient_events():
    with pytest.raises(InsufficientEvents):
        segment_strides(make_trial(heel_strikes=[100]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 2000), min_size=2, max_size=12, unique=True))
def test_strides_disjoint_and_cover_span(hs):
    hs = sorted(hs)
    t = make_trial(heel_strikes=hs)
    ts = np.arange(0, 2001, 50)
    strides = segment_strides(t, ts)
    seen = np.concatenate([s.sample_rows for s in strides]) if strides else np.array([], int)
    assert seen.size == np.unique(seen).size
    inside = np.flatnonzero((ts >= hs[0]) & (ts < hs[-1]))
    assert sorted(seen.tolist()) == inside.tolist()
    for s in strides:
        assert np.all((ts[s.sample_rows] >= s.start_ms) & (ts[s.sample_rows] < s.end_ms))


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-1, 1), st.integers(0, 500), st.integers(100, 2000))
def test_normalize_affine_exact(a, b, start, length):
    t = np.arange(0, 3001, 10)
    ns = normalize_stride(_stride(start, start + length), t, a + b * t)
    grid_t = start + length * ns.percent / 100.0
    assert ns.values.shape == (GRID_POINTS,)
    assert np.allclose(ns.values, a + b * grid_t, rtol=1e-9, atol=1e-9)


def test_normalize_sine_against_dense_oracle():
    # 100 Hz samples of one sine period; linear interpolation error <= h^2/8 * max|f''|
    period = 1000.0
    t = np.arange(0, 1001, 10)
    f = np.sin(2 * np.pi * t / period)
    ns = normalize_stride(_stride(0, 1000), t, f)
    dense = np.sin(2 * np.pi * ns.percent / 100.0)
    bound = 10.0 ** 2 / 8 * (2 * np.pi / period) ** 2
    assert np.max(np.abs(ns.values - dense)) <= bound + 1e-12


def test_normalize_too_few_samples():
    with pytest.raises(TooFewSamples):
        normalize_stride(_stride(0, 1000), [500, 2000], [0.0, 1.0])


def test_band_examples():
    same = [NormalizedStride(np.linspace(0, 100, 101), np.full(101, 3.0))] * 2
    band = trajectory_band(same)
    assert np.all(band.mean == 3.0) and np.all(band.sd == 0.0)
    pair = [NormalizedStride(np.linspace(0, 100, 101), np.full(101, v)) for v in (0.0, 2.0)]
    band = trajectory_band(pair)
    assert np.all(band.mean == 1.0) and np.all(band.sd == 1.0) and band.count == 2
    with pytest.raises(EmptyInput):
        trajectory_band([])


def test_triplets_and_band_axis():
    strides = [_stride(0, 1, StrideLabel.WALK_TO_STAIR, 0),
               _stride(1, 2, StrideLabel.STEADY_STATE, 1),
               _stride(2, 3, StrideLabel.STEADY_STATE, 2),
               _stride(3, 4, StrideLabel.STAIR_TO_WALK, 3)]
    (trip,) = transition_triplets(strides)
    assert [s.number for s in trip] == [0, 1, 3]
    grid = np.linspace(0, 100, 101)
    members = [tuple(NormalizedStride(grid, np.full(101, float(k))) for k in range(3))]
    band = triplet_band(members)
    assert band.percent[0] == -100.0 and band.percent[-1] == 200.0
    assert band.percent.size == 3 * 101 - 2
    assert np.all(np.diff(band.percent) > 0)
    assert band.mean[band.percent.tolist().index(0.0)] == 1.0  # boundary from later segment


def test_bands_csv(tmp_path):
    band = trajectory_band([NormalizedStride(np.linspace(0, 100, 101), np.zeros(101))])
    write_bands_csv(tmp_path / "b.csv", {"x": band})
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "series,percent,mean,sd" and len(lines) == 102
