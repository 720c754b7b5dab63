"""
Tests for the synthetic phantom generator and dataset writer.
"""
import math

import numpy as np
import pytest

from nucleiseg.exceptions import PhantomError
from nucleiseg.models import NUCLEI_NAMES, Split, VolumeKind
from nucleiseg.schemas import PhantomSpec
from nucleiseg.services.evaluation import roi_stats
from nucleiseg.services.phantom import (
    class_voxel_counts,
    default_split_counts,
    generate,
    generate_dataset,
    hemisphere_centers,
    jitter_spec,
    label_map,
    phantom_geometry,
)
from nucleiseg.services.volume_io import load_volume
from tests.conftest import TINY_SHAPE, make_tiny_spec

LARGE_NUCLEI = ("CN", "GP", "PUT", "THA")


def test_geometry_is_centred():
    """Test the grid centre sits at the physical origin"""
    geometry = phantom_geometry(make_tiny_spec())
    assert geometry.shape == TINY_SHAPE
    centre = geometry.voxel_to_physical([(n - 1) / 2 for n in geometry.shape])
    assert np.allclose(centre, 0.0)


def test_left_copy_mirrors_x():
    """Test bilateral centres differ only in the sign of x"""
    nucleus = make_tiny_spec().nucleus("PUT")
    right, left = hemisphere_centers(nucleus)
    assert right == (0, -12, 30) and left == (0, -12, -30)


def test_noise_free_phantom_has_exact_class_means():
    """Test roi_stats over ground truth recovers each nucleus mean susceptibility"""
    spec = make_tiny_spec(noise_scale=0.0)
    qsm, t1, labels = generate(spec)
    stats = roi_stats(labels, qsm)
    assert sorted(stats) == list(range(1, 8))
    for index, measurement in stats.items():
        nucleus = spec.nucleus(NUCLEI_NAMES[index])
        assert measurement.mean_susceptibility == nucleus.qsm_mean
    assert np.all(qsm.array[labels.array == 0] == spec.background_qsm_mean)
    assert np.all(t1.array[labels.array == 4] == spec.nucleus("THA").t1_mean)


def test_generation_is_deterministic():
    """Test the same spec yields identical volumes"""
    first = generate(make_tiny_spec(seed=4))
    second = generate(make_tiny_spec(seed=4))
    for a, b in zip(first, second):
        assert np.array_equal(a.data, b.data)
    other = generate(make_tiny_spec(seed=5))
    assert not np.array_equal(first[0].data, other[0].data)
    assert np.array_equal(first[2].data, other[2].data)


def test_default_layout_volumes_match_ellipsoids():
    """Test voxelized volumes against 4/3 pi abc for both hemispheres"""
    spec = PhantomSpec()
    geometry = phantom_geometry(spec)
    counts = class_voxel_counts(label_map(spec, geometry))
    for nucleus in spec.nuclei:
        analytic = 2 * 4 / 3 * math.pi * math.prod(nucleus.semi_axes_mm)
        measured = counts[nucleus.name] * geometry.voxel_volume
        tolerance = 0.15 if nucleus.name in LARGE_NUCLEI else 0.3
        assert measured == pytest.approx(analytic, rel=tolerance), nucleus.name


def test_default_layout_small_nuclei_are_small():
    """Test SN, RN and DN each occupy under 1/20 of the largest nucleus"""
    counts = class_voxel_counts(label_map(PhantomSpec()))
    largest = max(counts.values())
    for name in ("SN", "RN", "DN"):
        assert 0 < counts[name] < largest / 20


def test_small_fraction_limit_rejects_large_small_nuclei():
    """Test a small nucleus at or above the limit fraction raises"""
    with pytest.raises(PhantomError):
        label_map(PhantomSpec(small_fraction_limit=0.01))
    with pytest.raises(PhantomError):
        label_map(make_tiny_spec(small_fraction_limit=0.05))


def test_jittered_layouts_keep_small_nuclei_small():
    """Test every accepted jittered default layout keeps SN, RN and DN under 1/20 of the largest nucleus"""
    base = PhantomSpec()
    accepted = 0
    for seed in range(20):
        spec = jitter_spec(base, np.random.default_rng(seed), seed)
        try:
            counts = class_voxel_counts(label_map(spec))
        except PhantomError:
            continue
        accepted += 1
        largest = max(counts.values())
        for name in ("SN", "RN", "DN"):
            assert counts[name] < largest / 20, (seed, name)
    assert accepted > 0


def test_overlapping_nuclei_are_rejected():
    """Test two ellipsoids sharing voxels raise"""
    spec = make_tiny_spec()
    nuclei = [n.model_copy(update={"center_mm": (0, 14, 10)}) if n.name == "CN" else n for n in spec.nuclei]
    with pytest.raises(PhantomError):
        label_map(spec.model_copy(update={"nuclei": nuclei}))


def test_out_of_grid_nucleus_is_rejected():
    """Test an ellipsoid reaching past the grid raises"""
    spec = make_tiny_spec()
    nuclei = [n.model_copy(update={"center_mm": (40, 0, 20)}) if n.name == "THA" else n for n in spec.nuclei]
    with pytest.raises(PhantomError):
        generate(spec.model_copy(update={"nuclei": nuclei}))


def test_default_split_counts():
    """Test train/val/test partitioning rules"""
    assert default_split_counts(6) == (4, 1, 1)
    assert default_split_counts(3) == (1, 1, 1)
    assert default_split_counts(2) == (1, 1, 0)
    assert default_split_counts(1) == (1, 0, 0)
    with pytest.raises(PhantomError):
        default_split_counts(0)


def test_dataset_writes_manifest_and_volumes(tiny_dataset):
    """Test the written manifest, its splits and the saved label volumes"""
    root, manifest = tiny_dataset
    assert (root / "manifest.json").exists()
    assert [e.id for e in manifest.entries] == ["subject_000", "subject_001", "subject_002"]
    assert [e.split for e in manifest.entries] == [Split.TRAIN, Split.VAL, Split.TEST]

    labels = [load_volume(manifest.resolve(e.label), VolumeKind.LABEL).array for e in manifest.entries]
    for array in labels:
        assert set(np.unique(array)) == set(range(8))
    assert not np.array_equal(labels[0], labels[1])


def test_dataset_seed_controls_subjects(tmp_path):
    """Test a different dataset seed changes the layouts"""
    first = generate_dataset(1, make_tiny_spec(), seed=1, out_dir=tmp_path / "a")
    second = generate_dataset(1, make_tiny_spec(), seed=2, out_dir=tmp_path / "b")
    repeat = generate_dataset(1, make_tiny_spec(), seed=1, out_dir=tmp_path / "c")
    load = lambda m: load_volume(m.resolve(m.entries[0].label), VolumeKind.LABEL).array
    assert not np.array_equal(load(first), load(second))
    assert np.array_equal(load(first), load(repeat))


def test_dataset_rejects_bad_split_counts(tmp_path):
    """Test split counts must partition the subjects"""
    with pytest.raises(PhantomError):
        generate_dataset(3, make_tiny_spec(), seed=0, out_dir=tmp_path, split_counts=(2, 2, 0))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
