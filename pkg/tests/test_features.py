import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from usgait.errors import FrameTooSmall, MisalignedRows, ZeroTimeDelta
from usgait.features import (
    ChannelLayout,
    FeatureConfig,
    FeatureMatrix,
    KernelGrid,
    Standardization,
    assemble_feature_matrix,
    compute_temporal_features,
    extract_intensity_features,
    read_feature_csv,
    standardize,
    trial_features,
    write_feature_csv,
)
from usgait.frames import FrameSequence


def _seq(images, ts=None, spacing=1.0):
    images = np.asarray(images, dtype=np.uint8)
    ts = np.arange(images.shape[0]) * 50 if ts is None else ts
    return FrameSequence(ts, images, spacing)


def brute_force_means(image, k):
    """Double loop over kernels and their pixels, integer sum then one division."""
    rows, cols = image.shape[0] // k, image.shape[1] // k
    out = []
    for r in range(rows):
        for c in range(cols):
            total = 0
            for i in range(r * k, r * k + k):
                for j in range(c * k, c * k + k):
                    total += int(image[i, j])
            out.append(total / (k * k))
    return out


def test_uniform_frame():
    fm, grid = extract_intensity_features(_seq(np.full((2, 9, 12), 100)))
    assert grid.n == 12
    assert np.all(fm.values == 100.0)


def test_six_by_six_top_left_kernel():
    img = np.zeros((6, 6), np.uint8)
    img[:3, :3] = np.arange(9).reshape(3, 3)
    fm, grid = extract_intensity_features(_seq([img]), FeatureConfig(3.0))
    assert (grid.kernel_px, grid.rows, grid.cols, grid.n) == (3, 2, 2, 4)
    assert fm.values[0, 0] == 4.0


def test_edge_kernels_discarded():
    _, grid = extract_intensity_features(_seq(np.zeros((1, 5, 5))), FeatureConfig(3.0))
    assert (grid.rows, grid.cols, grid.n) == (1, 1, 1)


def test_kernel_px_rounding_and_minimum():
    assert KernelGrid.for_frames(10, 10, 0.4, 3.0).kernel_px == 8  # 7.5 -> 8
    assert KernelGrid.for_frames(10, 10, 5.0, 1.0).kernel_px == 1
    with pytest.raises(FrameTooSmall):
        KernelGrid.for_frames(2, 10, 1.0, 3.0)


def test_bright_kernel_location():
    img = np.zeros((12, 15), np.uint8)
    img[6:9, 9:12] = 255  # kernel row 2, col 3
    fm, grid = extract_intensity_features(_seq([img]))
    assert int(np.argmax(fm.values[0])) == grid.flat_index(2, 3) == 2 * 5 + 3


@settings(max_examples=100, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 20))),
       st.sampled_from([0.5, 1.0, 1.5, 3.0]))
def test_kernel_means_match_brute_force(image, spacing):
    k = max(1, int(round(3.0 / spacing)))
    if image.shape[0] < k or image.shape[1] < k:
        return
    fm, _ = extract_intensity_features(_seq([image], spacing=spacing))
    assert list(fm.values[0]) == brute_force_means(image, k)


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint8, (6, 9, 9)), st.permutations(range(6)))
def test_extraction_is_per_frame(stack, perm):
    a, _ = extract_intensity_features(_seq(stack))
    b, _ = extract_intensity_features(_seq(stack[list(perm)]))
    assert np.array_equal(b.values[np.argsort(perm)], a.values)


def test_temporal_constant_and_ramp():
    fm, _ = extract_intensity_features(_seq(np.full((4, 3, 3), 17)))
    tmp = compute_temporal_features(fm, [0, 50, 100, 150])
    assert np.all(tmp.values == 0.0)
    ramp = FeatureMatrix(np.array([[10.0], [12.0]]), [0, 1], ChannelLayout.INTENSITY_ONLY, 1)
    tmp = compute_temporal_features(ramp, [0, 50])
    assert tmp.values[0, 0] == 40.0
    assert list(tmp.frame_indices) == [1]


def test_temporal_errors():
    one = FeatureMatrix(np.zeros((1, 2)), [0], ChannelLayout.INTENSITY_ONLY, 2)
    with pytest.raises(ValueError):
        compute_temporal_features(one, [0])
    two = FeatureMatrix(np.zeros((2, 2)), [0, 1], ChannelLayout.INTENSITY_ONLY, 2)
    with pytest.raises(ZeroTimeDelta):
        compute_temporal_features(two, [5, 5])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-1e3, 1e3)),
       st.lists(st.integers(1, 100), min_size=4, max_size=4))
def test_temporal_time_reversal(values, gaps):
    ts = np.concatenate([[0], np.cumsum(gaps)])
    fwd = compute_temporal_features(
        FeatureMatrix(values, np.arange(5), ChannelLayout.INTENSITY_ONLY, 3), ts)
    rev = compute_temporal_features(
        FeatureMatrix(values[::-1], np.arange(5), ChannelLayout.INTENSITY_ONLY, 3),
        ts[-1] - ts[::-1])
    assert np.allclose(rev.values, -fwd.values[::-1], rtol=1e-12, atol=1e-9)


def test_assemble_shapes():
    stack = np.random.default_rng(1).integers(0, 256, (10, 6, 6))
    fm, _ = trial_features(_seq(stack), FeatureConfig(3.0, include_temporal=False))
    assert fm.values.shape == (10, 4)
    fm, _ = trial_features(_seq(stack), FeatureConfig(3.0, include_temporal=True))
    assert fm.values.shape == (9, 8)
    assert list(fm.frame_indices) == list(range(1, 10))
    assert fm.layout is ChannelLayout.INTENSITY_THEN_TEMPORAL


def test_assemble_misaligned():
    inten = FeatureMatrix(np.zeros((3, 2)), [0, 1, 2], ChannelLayout.INTENSITY_ONLY, 2)
    tmp = FeatureMatrix(np.zeros((2, 2)), [1, 7], ChannelLayout.TEMPORAL_ONLY, 2)
    with pytest.raises(MisalignedRows):
        assemble_feature_matrix(inten, tmp)


def test_standardize_examples():
    st_, out = standardize(np.array([[1.0], [3.0]]), np.array([[1.0], [3.0], [2.0]]))
    assert st_.mean[0] == 2.0 and st_.sd[0] == 1.0
    assert list(out[:, 0]) == [-1.0, 1.0, 0.0]
    _, out = standardize(np.full((4, 1), 0.3), np.full((2, 1), 0.3))
    assert np.all(out == 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 5)),
              elements=st.floats(-1e4, 1e4)))
def test_standardize_train_moments(x):
    s = Standardization.fit(x)
    z = s.apply(x)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    wide = x.std(axis=0) > 1e-6
    assert np.allclose(z.std(axis=0)[wide], 1.0, atol=1e-9)


def test_feature_csv_round_trip(tmp_path):
    fm = FeatureMatrix(np.array([[0.1, 2.0], [3.5, -4.25]]), [3, 4],
                       ChannelLayout.INTENSITY_ONLY, 2)
    write_feature_csv(tmp_path / "f.csv", fm)
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "frame_index,f0,f1"
    idx, vals = read_feature_csv(tmp_path / "f.csv")
    assert list(idx) == [3, 4] and np.array_equal(vals, fm.values)
