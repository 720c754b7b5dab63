"""
Preprocessing chain: bring T1WI onto the QSM grid, zero-pad to the network
matrix size, clip/rescale intensities to [0, 1] and stack input channels.
"""
from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np
from scipy import ndimage

from nucleiseg.exceptions import (
    ChannelMismatchError,
    GeometryMismatchError,
    PreprocessError,
)
from nucleiseg.models import (
    DEFAULT_SCHEME,
    Geometry,
    InputMode,
    Interpolation,
    Volume,
    VolumeKind,
)
from nucleiseg.schemas import DatasetManifest, ManifestEntry, PreprocessConfig
from nucleiseg.services.volume_io import load_volume

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreparedSubject:
    """
    A subject ready for the network.

    image and label live on the padded grid; qsm_original and label_original
    keep the unpadded, unclipped acquisition grid for measurement.
    """
    subject_id: str
    image: Volume
    label: Optional[Volume]
    qsm_original: Optional[Volume]
    label_original: Optional[Volume]
    pad_before: Tuple[int, int, int]
    original_geometry: Geometry


def resample_to_reference(moving: Volume, reference_geometry: Geometry,
                          affine: Optional[np.ndarray] = None,
                          interpolation: Interpolation = Interpolation.LINEAR) -> Volume:
    """
    Sample a volume on another grid through a rigid transform.

    Args:
        moving: single-channel volume to resample
        reference_geometry: output grid
        affine: 4x4 matrix mapping moving physical (z, y, x) mm to reference physical mm
        interpolation: linear for intensities, nearest for labels

    Returns:
        Volume: on reference_geometry; samples outside the moving grid are 0

    Raises:
        PreprocessError: multi-channel input, singular affine, or linear
            interpolation requested for a label volume
    """
    if moving.channels != 1:
        raise PreprocessError(f"Resampling needs a single-channel volume, got {moving.channels}")
    if moving.is_label and interpolation is not Interpolation.NEAREST:
        raise PreprocessError("Label volumes must be resampled with nearest interpolation")

    affine = np.eye(4) if affine is None else np.asarray(affine, dtype=np.float64)
    if affine.shape != (4, 4):
        raise PreprocessError(f"Affine must be 4x4, got {affine.shape}")
    if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
        raise PreprocessError("Affine transform is singular")

    # reference index -> reference mm -> moving mm -> moving index
    index_map = (
        np.linalg.inv(moving.geometry.index_to_physical_matrix())
        @ np.linalg.inv(affine)
        @ reference_geometry.index_to_physical_matrix()
    )
    if moving.shape == reference_geometry.shape and np.allclose(index_map, np.eye(4), atol=1e-12):
        return moving.replace(data=moving.data.copy(), geometry=reference_geometry)

    source = moving.array if moving.is_label else moving.array.astype(np.float64)
    resampled = ndimage.affine_transform(
        source,
        index_map[:3, :3],
        offset=index_map[:3, 3],
        output_shape=reference_geometry.shape,
        order=interpolation.order,
        mode="constant",
        cval=0.0,
        prefilter=False,
    )
    logger.info(f"Resampled {moving.shape} -> {reference_geometry.shape} ({interpolation.value})")
    return moving.replace(data=resampled[np.newaxis], geometry=reference_geometry)


def pad_offsets(source_shape, target_shape) -> Tuple[int, int, int]:
    """Voxels added before the data on each axis; odd remainders go to the high side"""
    if any(t < s for s, t in zip(source_shape, target_shape)):
        raise PreprocessError(f"Target shape {tuple(target_shape)} is smaller than source {tuple(source_shape)}")
    return tuple((int(t) - int(s)) // 2 for s, t in zip(source_shape, target_shape))


def pad_to_shape(volume: Volume, target_shape) -> Volume:
    """
    Zero-pad a volume so the data sits centred in target_shape.

    The origin moves so every original voxel keeps its physical position.
    Label volumes are padded with background.

    Raises:
        PreprocessError: target smaller than the source on some axis
    """
    target_shape = tuple(int(t) for t in target_shape)
    before = pad_offsets(volume.shape, target_shape)
    if target_shape == volume.shape:
        return volume
    widths = [(0, 0)] + [(b, t - s - b) for b, s, t in zip(before, volume.shape, target_shape)]
    padded = np.pad(volume.data, widths, mode="constant", constant_values=0)
    origin = tuple(o - b * sp for o, b, sp in zip(volume.geometry.origin, before, volume.geometry.spacing))
    return volume.replace(data=padded, geometry=volume.geometry.with_shape(target_shape, origin=origin))


def crop_to_shape(volume: Volume, before, shape) -> Volume:
    """Inverse of pad_to_shape: cut the original block back out"""
    slices = tuple(slice(b, b + n) for b, n in zip(before, shape))
    origin = tuple(o + b * sp for o, b, sp in zip(volume.geometry.origin, before, volume.geometry.spacing))
    return volume.replace(
        data=volume.data[(slice(None),) + slices],
        geometry=volume.geometry.with_shape(shape, origin=origin),
    )


def clip_rescale(volume: Volume, window: Tuple[float, float]) -> Volume:
    """
    Clamp intensities to [lo, hi] and map them linearly onto [0, 1].

    Raises:
        PreprocessError: label volume or empty window
    """
    if volume.is_label:
        raise PreprocessError("clip_rescale applies to intensity volumes only")
    lo, hi = float(window[0]), float(window[1])
    if hi <= lo:
        raise PreprocessError(f"Window upper bound must exceed lower bound, got ({lo}, {hi})")
    rescaled = (np.clip(volume.data.astype(np.float64), lo, hi) - lo) / (hi - lo)
    return volume.replace(data=rescaled)


def stack_channels(qsm: Optional[Volume], t1: Optional[Volume], mode: InputMode) -> Volume:
    """
    Assemble the network input for an input mode.

    Channel order for qsm_t1 is QSM then T1WI.

    Raises:
        ChannelMismatchError: a channel required by the mode is missing
        GeometryMismatchError: QSM and T1WI grids differ
    """
    mode = InputMode(mode)
    if mode in (InputMode.QSM_T1, InputMode.QSM_ONLY) and qsm is None:
        raise ChannelMismatchError(f"Input mode {mode.value} needs a QSM volume")
    if mode in (InputMode.QSM_T1, InputMode.T1_ONLY) and t1 is None:
        raise ChannelMismatchError(f"Input mode {mode.value} needs a T1WI volume")

    if mode is InputMode.QSM_ONLY:
        return qsm
    if mode is InputMode.T1_ONLY:
        return t1
    if not qsm.geometry.is_close(t1.geometry):
        raise GeometryMismatchError(
            f"QSM grid {qsm.shape} and T1WI grid {t1.shape} differ; resample first"
        )
    return qsm.replace(data=np.concatenate([qsm.data, t1.data], axis=0))


def prepare_volumes(qsm: Volume, t1: Optional[Volume], label: Optional[Volume],
                    config: PreprocessConfig, affine: Optional[np.ndarray] = None,
                    subject_id: str = "subject") -> PreparedSubject:
    """
    Run the full chain on loaded volumes.

    Args:
        qsm: raw QSM; its grid is the reference grid
        t1: raw T1WI on its own grid (ignored for qsm_only)
        label: manual labels on the QSM grid, if available
        config: windows, padded shape and input mode
        affine: T1WI -> QSM physical transform, identity when omitted
        subject_id: used in log messages

    Returns:
        PreparedSubject
    """
    mode = config.input_mode
    reference = qsm.geometry
    if label is not None and not label.geometry.is_close(reference):
        raise GeometryMismatchError(f"{subject_id}: label grid {label.shape} differs from QSM grid {reference.shape}")

    qsm_input = clip_rescale(qsm, config.qsm_window) if mode is not InputMode.T1_ONLY else None
    t1_input = None
    if mode is not InputMode.QSM_ONLY:
        if t1 is None:
            raise ChannelMismatchError(f"{subject_id}: input mode {mode.value} needs a T1WI volume")
        t1_on_grid = resample_to_reference(t1, reference, affine, Interpolation.LINEAR)
        t1_input = clip_rescale(t1_on_grid, config.t1_window)

    stacked = stack_channels(qsm_input, t1_input, mode)
    before = pad_offsets(reference.shape, config.target_shape)
    image = pad_to_shape(stacked, config.target_shape)
    padded_label = pad_to_shape(label, config.target_shape) if label is not None else None
    logger.info(f"Prepared {subject_id}: input {image.data.shape}, pad {before}")

    return PreparedSubject(
        subject_id=subject_id,
        image=image,
        label=padded_label,
        qsm_original=qsm,
        label_original=label,
        pad_before=before,
        original_geometry=reference,
    )


def prepare_subject(entry: ManifestEntry, manifest: DatasetManifest, config: PreprocessConfig,
                    num_classes: int = DEFAULT_SCHEME.num_classes) -> PreparedSubject:
    """Load one manifest subject from disk and run the full chain"""
    qsm = load_volume(manifest.resolve(entry.qsm), VolumeKind.INTENSITY)
    t1 = None
    if config.input_mode is not InputMode.QSM_ONLY and entry.t1 is not None:
        t1 = load_volume(manifest.resolve(entry.t1), VolumeKind.INTENSITY)
    label = None
    if entry.label is not None:
        label = load_volume(manifest.resolve(entry.label), VolumeKind.LABEL, num_classes=num_classes)
    return prepare_volumes(qsm, t1, label, config, manifest.affine_matrix(), subject_id=entry.id)
