"""
NIfTI-backed volume I/O and dataset manifest handling.

Arrays are held in (channel, z, y, x) order; NIfTI files store (x, y, z[, c]).
Orientation codes are recorded on load but voxels are never reoriented.
"""
from pathlib import Path
from typing import Union
import json
import logging

import nibabel as nib
import numpy as np
from pydantic import ValidationError

from nucleiseg.exceptions import ConfigError, VolumeError
from nucleiseg.models import DEFAULT_SCHEME, Geometry, Volume, VolumeKind
from nucleiseg.schemas import DatasetManifest
from nucleiseg.utils.file_handler import validate_file_extension

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def load_volume(path: PathLike, expected_kind: VolumeKind = VolumeKind.INTENSITY,
                num_classes: int = DEFAULT_SCHEME.num_classes) -> Volume:
    """
    Load a NIfTI-1 file as a Volume.

    Args:
        path: .nii or .nii.gz file
        expected_kind: intensity or label; label volumes are range-checked
        num_classes: label range upper bound (exclusive)

    Returns:
        Volume: data in (C, z, y, x) with spacing/origin from the header

    Raises:
        VolumeError: missing or unreadable file, unsupported dimensionality
        LabelRangeError: label file with non-integer or out-of-range values
    """
    path = Path(path)
    if not validate_file_extension(path.name):
        raise VolumeError(f"Not a NIfTI file: {path}")
    if not path.exists():
        raise VolumeError(f"Volume file not found: {path}")

    try:
        image = nib.load(str(path))
        raw = np.asanyarray(image.dataobj)
    except Exception as e:
        raise VolumeError(f"Could not read {path}: {e}")

    header_shape = tuple(int(n) for n in image.header.get_data_shape())
    if tuple(raw.shape) != header_shape:
        raise VolumeError(f"{path}: header shape {header_shape} disagrees with data {raw.shape}")
    if raw.ndim == 3:
        data = raw.transpose(2, 1, 0)[np.newaxis]
    elif raw.ndim == 4:
        data = raw.transpose(3, 2, 1, 0)
    else:
        raise VolumeError(f"{path}: expected a 3D or 4D image, got {raw.ndim}D")

    zooms = image.header.get_zooms()[:3]
    affine = image.affine
    geometry = Geometry(
        spacing=tuple(float(z) for z in reversed(zooms)),
        shape=tuple(int(n) for n in data.shape[1:]),
        origin=tuple(float(o) for o in reversed(affine[:3, 3])),
    )
    orientation = "".join(nib.aff2axcodes(affine))

    volume = Volume(
        data=np.ascontiguousarray(data),
        geometry=geometry,
        kind=expected_kind,
        num_classes=num_classes,
        orientation=orientation,
    )
    logger.info(f"Loaded {expected_kind.value} volume {path.name}: shape {volume.data.shape}, spacing {geometry.spacing}")
    return volume


def save_volume(volume: Volume, path: PathLike) -> Path:
    """
    Write a Volume as NIfTI-1.

    The affine written is diagonal (spacing) with the geometry origin as
    translation; labels are stored as uint8, intensities as float32.

    Returns:
        Path: the written file
    """
    path = Path(path)
    if not validate_file_extension(path.name):
        raise VolumeError(f"Refusing to write non-NIfTI path: {path}")
    path.parent.mkdir(parents=True, exist_ok=True)

    if volume.channels == 1:
        array = volume.data[0].transpose(2, 1, 0)
    else:
        array = volume.data.transpose(3, 2, 1, 0)
    affine = np.eye(4)
    affine[:3, :3] = np.diag(list(reversed(volume.geometry.spacing)))
    affine[:3, 3] = list(reversed(volume.geometry.origin))

    dtype = np.uint8 if volume.is_label else np.float32
    image = nib.Nifti1Image(np.ascontiguousarray(array, dtype=dtype), affine)
    image.header.set_data_dtype(dtype)
    image.header.set_zooms(tuple(reversed(volume.geometry.spacing)) + ((1.0,) if volume.channels > 1 else ()))
    nib.save(image, str(path))
    if not path.exists() or path.stat().st_size == 0:
        raise VolumeError(f"Failed to save volume: {path}")
    return path


def voxel_volume(geometry: Geometry) -> float:
    """Volume of one voxel in mm^3"""
    return geometry.voxel_volume


def load_manifest(path: PathLike, check_files: bool = True) -> DatasetManifest:
    """
    Read a JSON dataset manifest.

    Args:
        path: manifest file
        check_files: verify every referenced file exists

    Raises:
        ConfigError: unreadable or invalid manifest
        VolumeError: referenced file missing
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Manifest not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"Manifest {path} is not valid JSON: {e}")
    payload.setdefault("root", str(path.parent))
    try:
        manifest = DatasetManifest.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"Invalid manifest {path}:\n{e}")

    if check_files:
        for entry in manifest.entries:
            for relative in (entry.qsm, entry.t1, entry.label):
                resolved = manifest.resolve(relative)
                if resolved is not None and not resolved.exists():
                    raise VolumeError(f"Subject {entry.id}: missing file {resolved}")

    logger.info(f"Loaded manifest {path}: {manifest.split_counts()}")
    return manifest


def save_manifest(manifest: DatasetManifest, path: PathLike) -> Path:
    """Write a manifest as JSON; root is omitted so the file stays relocatable"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = manifest.model_dump(mode="json", exclude={"root"}, exclude_none=True)
    path.write_text(json.dumps(payload, indent=2))
    return path
