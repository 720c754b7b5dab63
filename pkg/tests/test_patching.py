"""
Tests for augmentation, training patch pairs, the inference grid and stitching.
"""
import numpy as np
import pytest

from nucleiseg.exceptions import CoverageError, GeometryMismatchError, PatchError
from nucleiseg.models import Geometry, Volume, VolumeKind
from nucleiseg.schemas import AugmentSpec
from nucleiseg.services.patching import (
    GlobalContext,
    augment,
    center_pair,
    downsample_inplane,
    downsample_labels,
    downsampled_geometry,
    inference_grid,
    sample_training_pair,
    stitch,
)

PATCH = (8, 32, 32)


def _pair_volumes(shape=(8, 64, 96), seed=0, channels=2):
    rng = np.random.default_rng(seed)
    geometry = Geometry(spacing=(2.0, 0.5134, 0.5134), shape=shape)
    image = Volume(data=rng.random((channels,) + shape), geometry=geometry)
    labels = np.zeros(shape, dtype=np.uint8)
    labels[2:5, 20:26, 30:38] = 4
    labels[3:6, 40:44, 70:75] = 6
    return image, Volume(data=labels, geometry=geometry, kind=VolumeKind.LABEL)


def test_augment_disabled_is_identity():
    """Test a disabled spec returns the inputs"""
    image, labels = _pair_volumes()
    out_image, out_labels = augment(image, labels, AugmentSpec(enabled=False), 0)
    assert out_image is image and out_labels is labels


def test_augment_is_deterministic():
    """Test the same seed gives identical outputs"""
    image, labels = _pair_volumes()
    first = augment(image, labels, AugmentSpec(), 123)
    second = augment(image, labels, AugmentSpec(), 123)
    assert np.array_equal(first[0].data, second[0].data)
    assert np.array_equal(first[1].data, second[1].data)


def test_double_flip_restores_volume():
    """Test forced flips without rotation are involutions that keep the label histogram"""
    image, labels = _pair_volumes()
    spec = AugmentSpec(flip_prob=1.0, max_rotation_deg=0.0)
    once_image, once_labels = augment(image, labels, spec, 5)
    assert np.array_equal(np.bincount(once_labels.data.ravel(), minlength=8),
                          np.bincount(labels.data.ravel(), minlength=8))
    assert np.array_equal(once_image.data, image.data[:, ::-1, ::-1, ::-1])
    twice_image, twice_labels = augment(once_image, once_labels, spec, 6)
    assert np.array_equal(twice_image.data, image.data)
    assert np.array_equal(twice_labels.data, labels.data)


def test_augment_rotation_keeps_label_set():
    """Test nearest rotation never invents classes"""
    image, labels = _pair_volumes()
    _, rotated = augment(image, labels, AugmentSpec(flip_prob=0.0, max_rotation_deg=30.0), 9)
    assert set(np.unique(rotated.data)) <= {0, 4, 6}


def test_augment_requires_shared_grid():
    """Test image and label must share geometry"""
    image, _ = _pair_volumes()
    _, other = _pair_volumes(shape=(8, 64, 64))
    with pytest.raises(GeometryMismatchError):
        augment(image, other, AugmentSpec(), 0)


def test_downsample_average_and_nearest():
    """Test in-plane average pooling and nearest label sampling"""
    data = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    pooled = downsample_inplane(data, 2)
    assert pooled.shape == (1, 1, 2, 2)
    assert pooled[0, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]

    labels = np.arange(16, dtype=np.uint8).reshape(1, 4, 4) % 8
    assert downsample_labels(labels, 2).tolist() == [[[0, 2], [0, 2]]]
    assert downsample_inplane(np.ones((1, 2, 5, 5), dtype=np.float32), 2).shape == (1, 2, 3, 3)


def test_rate_one_global_patch_equals_local():
    """Test rate 1 gives a co-centred crop with the same field of view"""
    image, labels = _pair_volumes()
    pair = sample_training_pair(image, labels, 1, 3, patch_shape=PATCH, jitter=4)
    assert pair.global_corner == pair.local_corner
    assert np.array_equal(pair.global_, pair.local)
    assert np.array_equal(pair.global_label, pair.local_label)


def test_rate_two_field_of_view_and_centre():
    """Test the global patch covers twice the in-plane field of view around the same centre"""
    image, labels = _pair_volumes()
    spacing = image.geometry.spacing[1]
    assert PATCH[1] * spacing == pytest.approx(16.4288)
    assert PATCH[1] * spacing * 2 == pytest.approx(32.8576)

    coarse = downsampled_geometry(image.geometry, 2)
    assert coarse.spacing[1] == pytest.approx(2 * spacing)
    for seed in range(10):
        pair = sample_training_pair(image, labels, 2, seed, patch_shape=PATCH, jitter=4)
        assert pair.local.shape == pair.global_.shape == (2,) + PATCH
        assert pair.global_label.shape == PATCH
        local_center = image.geometry.voxel_to_physical(np.asarray(pair.local_corner) + (np.asarray(PATCH) - 1) / 2)
        global_center = coarse.voxel_to_physical(np.asarray(pair.global_corner) + (np.asarray(PATCH) - 1) / 2)
        assert np.all(np.abs(local_center - global_center)[1:] <= coarse.spacing[1])
        assert pair.local_corner[0] == pair.global_corner[0]


def test_constant_image_gives_constant_patches():
    """Test sampling cannot invent values inside the grid"""
    image, labels = _pair_volumes()
    constant = image.replace(data=np.full(image.data.shape, 0.25, dtype=np.float32))
    pair = sample_training_pair(constant, labels, 1, 0, patch_shape=PATCH)
    assert np.all(pair.local == 0.25)
    assert np.all(pair.global_ == 0.25)


def test_foreground_bias_centres_on_labels():
    """Test fg_bias 1 always includes foreground in the local patch"""
    image, labels = _pair_volumes()
    for seed in range(10):
        pair = sample_training_pair(image, labels, 2, seed, fg_bias=1.0, patch_shape=PATCH, jitter=4)
        assert pair.local_label.any()


def test_sampling_errors():
    """Test undersized volumes and empty foreground with fg_bias 1"""
    image, labels = _pair_volumes()
    with pytest.raises(PatchError):
        sample_training_pair(image, labels, 2, 0, patch_shape=(8, 128, 128))
    empty = labels.replace(data=np.zeros_like(labels.data))
    with pytest.raises(PatchError):
        sample_training_pair(image, empty, 2, 0, fg_bias=1.0, patch_shape=PATCH)
    pair = sample_training_pair(image, empty, 2, 0, fg_bias=0.5, patch_shape=PATCH)
    assert not pair.local_label.any()


def test_global_patch_zero_extends():
    """Test the global crop reads zeros beyond the downsampled grid"""
    image, labels = _pair_volumes()
    pair = GlobalContext(image.data, labels.array, 4).pair((0, 0, 0), PATCH)
    assert pair.global_corner[1] < 0
    assert np.all(pair.global_[:, :, 0, :] == 0)


def test_inference_grid_acquisition_plane():
    """Test 336x448 tiles with 128 patches and stride 64"""
    geometry = Geometry(spacing=(2, 0.5134, 0.5134), shape=(64, 336, 448))
    corners = inference_grid(geometry, (128, 128), (64, 64))
    ys = sorted({c[1] for c in corners})
    xs = sorted({c[2] for c in corners})
    assert ys == [0, 64, 128, 208]
    assert xs == [0, 64, 128, 192, 256, 320]
    assert len(corners) == 24
    assert corners[-1] == (0, 208, 320)


def test_inference_grid_small_cases():
    """Test exact fit, disjoint tiling and undersized planes"""
    exact = Geometry(spacing=(1, 1, 1), shape=(64, 128, 128))
    assert inference_grid(exact) == [(0, 0, 0)]
    tiled = Geometry(spacing=(1, 1, 1), shape=(64, 256, 256))
    assert inference_grid(tiled, (128, 128), (128, 128)) == [(0, 0, 0), (0, 0, 128), (0, 128, 0), (0, 128, 128)]
    with pytest.raises(PatchError):
        inference_grid(Geometry(spacing=(1, 1, 1), shape=(64, 100, 128)))


def test_inference_grid_appends_when_shift_would_gap():
    """Test a large stride keeps full coverage"""
    geometry = Geometry(spacing=(1, 1, 1), shape=(4, 300, 128))
    ys = sorted({c[1] for c in inference_grid(geometry, (128, 128), (128, 128))})
    assert ys == [0, 128, 172]


def _one_hot(index, num_classes, shape):
    patch = np.zeros((num_classes,) + shape)
    patch[index] = 1.0
    return patch


def test_stitch_single_and_identical_patches():
    """Test one full patch, or two equal overlapping patches, stitch to that patch"""
    geometry = Geometry(spacing=(1, 1, 1), shape=(2, 4, 4))
    rng = np.random.default_rng(0)
    probs = rng.random((3, 2, 4, 4))
    probs /= probs.sum(axis=0, keepdims=True)
    single = stitch([((0, 0, 0), probs)], geometry, 3)
    assert np.allclose(single.data, probs, atol=1e-6)
    double = stitch([((0, 0, 0), probs), ((0, 0, 0), probs)], geometry, 3)
    assert np.allclose(double.data, probs, atol=1e-6)


def test_stitch_disagreement_averages():
    """Test one-hot disagreement on the overlap gives 0.5/0.5"""
    geometry = Geometry(spacing=(1, 1, 1), shape=(1, 2, 3))
    out = stitch([((0, 0, 0), _one_hot(1, 3, (1, 2, 2))), ((0, 0, 1), _one_hot(2, 3, (1, 2, 2)))], geometry, 3)
    assert out.data[:, 0, 0, 1].tolist() == [0.0, 0.5, 0.5]
    assert out.data[1, 0, 0, 0] == 1.0 and out.data[2, 0, 0, 2] == 1.0


def test_stitch_errors():
    """Test uncovered voxels and out-of-bounds patches"""
    geometry = Geometry(spacing=(1, 1, 1), shape=(1, 2, 4))
    with pytest.raises(CoverageError):
        stitch([((0, 0, 0), _one_hot(0, 2, (1, 2, 2)))], geometry, 2)
    with pytest.raises(PatchError):
        stitch([((0, 0, 3), _one_hot(0, 2, (1, 2, 2)))], geometry, 2)


def test_stitch_normalization_on_acquisition_grid():
    """Test random patch predictions over the full plane cover every voxel and sum to one"""
    geometry = Geometry(spacing=(2, 0.5134, 0.5134), shape=(4, 336, 448))
    rng = np.random.default_rng(7)
    patches = []
    for corner in inference_grid(geometry, (128, 128), (64, 64)):
        logits = rng.normal(size=(8, 4, 128, 128))
        probs = np.exp(logits) / np.exp(logits).sum(axis=0, keepdims=True)
        patches.append((corner, probs))
    out = stitch(patches, geometry, 8)
    assert np.allclose(out.data.sum(axis=0), 1.0, atol=1e-5)


def test_center_pair_is_deterministic():
    """Test validation pairs sit at the volume centre"""
    image, labels = _pair_volumes()
    pair = center_pair(image, labels, 2, PATCH)
    assert pair.local_corner == (0, 16, 32)
    assert np.array_equal(pair.local, center_pair(image, labels, 2, PATCH).local)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
