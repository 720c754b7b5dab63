"""
Tests for geometry, volumes, NIfTI I/O and dataset manifests.
Run with: pytest tests/
"""
import json

import numpy as np
import pytest

from nucleiseg.exceptions import ConfigError, LabelRangeError, VolumeError
from nucleiseg.models import DEFAULT_SCHEME, Geometry, Split, Volume, VolumeKind
from nucleiseg.schemas import DatasetManifest, ManifestEntry
from nucleiseg.services.volume_io import (
    load_manifest,
    load_volume,
    save_manifest,
    save_volume,
    voxel_volume,
)

SWI_GEOMETRY = Geometry(spacing=(2.0, 0.5134, 0.5134), shape=(56, 336, 448))


def test_voxel_volume_examples():
    """Test voxel volume is the product of spacings"""
    assert voxel_volume(SWI_GEOMETRY) == pytest.approx(0.527159, abs=1e-6)
    assert voxel_volume(Geometry(spacing=(1, 1, 1), shape=(1, 1, 1))) == 1.0
    assert voxel_volume(Geometry(spacing=(2, 0.5, 0.5), shape=(1, 1, 1))) == 0.5


def test_physical_extent_of_acquisition_grid():
    """Test physical extent is shape times spacing"""
    extent = SWI_GEOMETRY.physical_extent
    assert extent == pytest.approx((112.0, 172.5024, 230.0032), abs=1e-9)


def test_geometry_rejects_bad_values():
    """Test non-positive spacing and empty shapes are rejected"""
    with pytest.raises(ValueError):
        Geometry(spacing=(0, 1, 1), shape=(2, 2, 2))
    with pytest.raises(ValueError):
        Geometry(spacing=(1, 1, 1), shape=(0, 2, 2))


def test_class_scheme_weights():
    """Test background weight 0.1 and foreground weights 0.4"""
    assert DEFAULT_SCHEME.num_classes == 8
    assert DEFAULT_SCHEME.names[0] == "background"
    assert DEFAULT_SCHEME.weights[0] == 0.1
    assert all(w == 0.4 for w in DEFAULT_SCHEME.weights[1:])


def test_volume_adds_channel_axis():
    """Test 3D data becomes a single-channel volume"""
    geometry = Geometry(spacing=(1, 1, 1), shape=(2, 3, 4))
    volume = Volume(data=np.zeros((2, 3, 4)), geometry=geometry)
    assert volume.data.shape == (1, 2, 3, 4)
    assert volume.data.dtype == np.float32


def test_volume_shape_must_match_geometry():
    """Test data/geometry disagreement is an error"""
    geometry = Geometry(spacing=(1, 1, 1), shape=(2, 3, 4))
    with pytest.raises(VolumeError):
        Volume(data=np.zeros((2, 3, 5)), geometry=geometry)


def test_label_volume_validation():
    """Test label volumes reject out-of-range and fractional values"""
    geometry = Geometry(spacing=(1, 1, 1), shape=(1, 2, 2))
    ok = Volume(data=np.array([[[0, 7], [3, 1]]]), geometry=geometry, kind=VolumeKind.LABEL)
    assert ok.data.dtype == np.uint8

    with pytest.raises(LabelRangeError):
        Volume(data=np.array([[[0, 8], [3, 1]]]), geometry=geometry, kind=VolumeKind.LABEL)
    with pytest.raises(LabelRangeError):
        Volume(data=np.array([[[0, 1.5], [3, 1]]]), geometry=geometry, kind=VolumeKind.LABEL)
    with pytest.raises(LabelRangeError):
        Volume(data=np.zeros((2, 1, 2, 2)), geometry=geometry, kind=VolumeKind.LABEL)


def test_save_load_round_trip(tmp_path):
    """Test load(save(v)) keeps data bit-identical and geometry within 1e-6 mm"""
    geometry = Geometry(spacing=(2.0, 0.5134, 0.5134), shape=(6, 10, 12), origin=(-5.0, 3.25, 7.5))
    rng = np.random.default_rng(0)
    volume = Volume(data=rng.normal(size=(6, 10, 12)), geometry=geometry)

    path = save_volume(volume, tmp_path / "qsm.nii.gz")
    loaded = load_volume(path)
    assert loaded.data.shape == (1, 6, 10, 12)
    assert np.array_equal(loaded.data, volume.data)
    assert loaded.geometry.is_close(geometry, tol=1e-6)

    again = load_volume(save_volume(loaded, tmp_path / "again.nii"))
    assert np.array_equal(again.data, loaded.data)
    assert again.geometry.is_close(loaded.geometry, tol=1e-6)


def test_multichannel_round_trip(tmp_path):
    """Test 4D files map to (C, z, y, x)"""
    geometry = Geometry(spacing=(1, 1, 1), shape=(3, 4, 5))
    data = np.arange(2 * 3 * 4 * 5, dtype=np.float32).reshape(2, 3, 4, 5)
    loaded = load_volume(save_volume(Volume(data=data, geometry=geometry), tmp_path / "two.nii.gz"))
    assert loaded.channels == 2
    assert np.array_equal(loaded.data, data)


def test_label_file_out_of_range(tmp_path):
    """Test loading a label file containing value 8 fails"""
    geometry = Geometry(spacing=(1, 1, 1), shape=(2, 2, 2))
    intensity = Volume(data=np.full((2, 2, 2), 8.0), geometry=geometry)
    path = save_volume(intensity, tmp_path / "bad_label.nii.gz")
    with pytest.raises(LabelRangeError):
        load_volume(path, VolumeKind.LABEL)


def test_load_missing_or_wrong_extension(tmp_path):
    """Test unreadable inputs raise VolumeError"""
    with pytest.raises(VolumeError):
        load_volume(tmp_path / "missing.nii.gz")
    other = tmp_path / "scan.png"
    other.write_bytes(b"not nifti")
    with pytest.raises(VolumeError):
        load_volume(other)


def _write_subject(tmp_path, subject_id):
    geometry = Geometry(spacing=(1, 1, 1), shape=(2, 2, 2))
    folder = tmp_path / subject_id
    save_volume(Volume(data=np.zeros((2, 2, 2)), geometry=geometry), folder / "qsm.nii.gz")
    save_volume(Volume(data=np.zeros((2, 2, 2), dtype=np.uint8), geometry=geometry, kind=VolumeKind.LABEL),
                folder / "label.nii.gz")


def test_manifest_round_trip(tmp_path):
    """Test manifests resolve relative paths and report split counts"""
    _write_subject(tmp_path, "a")
    _write_subject(tmp_path, "b")
    manifest = DatasetManifest(entries=[
        ManifestEntry(id="a", qsm="a/qsm.nii.gz", label="a/label.nii.gz", split=Split.TRAIN),
        ManifestEntry(id="b", qsm="b/qsm.nii.gz", label="b/label.nii.gz", split=Split.TEST),
    ], affine=[1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 2, 0, 0, 0, 1])
    save_manifest(manifest, tmp_path / "manifest.json")

    loaded = load_manifest(tmp_path / "manifest.json")
    assert loaded.split_counts() == {"train": 1, "val": 0, "test": 1}
    assert loaded.resolve(loaded.entries[0].qsm) == tmp_path / "a" / "qsm.nii.gz"
    assert loaded.affine_matrix()[2, 3] == 2
    assert "root" not in json.loads((tmp_path / "manifest.json").read_text())


def test_manifest_errors(tmp_path):
    """Test duplicate ids and missing files are reported"""
    entry = {"id": "a", "qsm": "a/qsm.nii.gz", "split": "train"}
    (tmp_path / "dup.json").write_text(json.dumps({"entries": [entry, entry]}))
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "dup.json")

    (tmp_path / "missing.json").write_text(json.dumps({"entries": [entry]}))
    with pytest.raises(VolumeError):
        load_manifest(tmp_path / "missing.json")

    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "nope.json")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
