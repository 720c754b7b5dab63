"""
Patch geometry: aligned local/global training pairs, augmentation, the
sliding-window inference grid and probability stitching.

Corners are (z, y, x) voxel indices on the padded grid. The global patch is
cut from the volume average-pooled in-plane by the rate, centred on the
local patch; z is never downsampled.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from nucleiseg.exceptions import CoverageError, GeometryMismatchError, PatchError
from nucleiseg.models import Geometry, Volume, VolumeKind
from nucleiseg.schemas import AugmentSpec

logger = logging.getLogger(__name__)

Corner = Tuple[int, int, int]


@dataclass(frozen=True)
class PatchPair:
    """Aligned local and global patches with their labels"""
    local: np.ndarray
    global_: np.ndarray
    local_label: Optional[np.ndarray]
    global_label: Optional[np.ndarray]
    local_corner: Corner
    global_corner: Corner
    rate: int


# ==================== Augmentation ====================

def augment(image: Volume, label: Volume, spec: AugmentSpec, rng_seed) -> Tuple[Volume, Volume]:
    """
    Apply one random flip/rotation draw identically to image and label.

    Flips reverse the z, y and x axes independently with spec.flip_prob;
    the rotation is about z, uniform in [-max, +max] degrees, linear for the
    image and nearest for the label.
    """
    if not image.geometry.is_close(label.geometry):
        raise GeometryMismatchError("augment needs image and label on the same grid")
    if not spec.enabled:
        return image, label

    rng = np.random.default_rng(rng_seed)
    flips = rng.random(3) < spec.flip_prob
    angle = float(rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg)) if spec.max_rotation_deg > 0 else 0.0

    data, labels = image.data, label.data
    for axis, flip in enumerate(flips, start=1):
        if flip:
            data = np.flip(data, axis=axis)
            labels = np.flip(labels, axis=axis)

    if angle != 0.0:
        data = ndimage.rotate(data, angle, axes=(3, 2), reshape=False, order=1, mode="constant", cval=0.0)
        labels = ndimage.rotate(labels, angle, axes=(3, 2), reshape=False, order=0, mode="constant", cval=0)

    return (
        image.replace(data=np.ascontiguousarray(data)),
        label.replace(data=np.ascontiguousarray(labels)),
    )


# ==================== Global context ====================

def downsample_inplane(data: np.ndarray, rate: int) -> np.ndarray:
    """Average-pool (C, z, y, x) data by rate in y and x; edges are zero-extended to a multiple of rate"""
    if rate == 1:
        return data.astype(np.float32, copy=False)
    padded = _pad_to_multiple(data, rate)
    pooled = F.avg_pool3d(torch.from_numpy(np.ascontiguousarray(padded, dtype=np.float32))[None],
                          kernel_size=(1, rate, rate), stride=(1, rate, rate))
    return pooled[0].numpy()


def downsample_labels(labels: np.ndarray, rate: int) -> np.ndarray:
    """Nearest-neighbour in-plane downsampling of a (z, y, x) label array"""
    if rate == 1:
        return labels
    padded = _pad_to_multiple(labels[np.newaxis], rate)[0]
    offset = (rate - 1) // 2
    return np.ascontiguousarray(padded[:, offset::rate, offset::rate])


def downsampled_geometry(geometry: Geometry, rate: int) -> Geometry:
    """Grid of the in-plane downsampled volume"""
    sz, sy, sx = geometry.spacing
    oz, oy, ox = geometry.origin
    shape = (geometry.shape[0], math.ceil(geometry.shape[1] / rate), math.ceil(geometry.shape[2] / rate))
    shift = (rate - 1) / 2
    return Geometry(
        spacing=(sz, sy * rate, sx * rate),
        shape=shape,
        origin=(oz, oy + shift * sy, ox + shift * sx),
    )


def _pad_to_multiple(data: np.ndarray, rate: int) -> np.ndarray:
    extra_y = (-data.shape[-2]) % rate
    extra_x = (-data.shape[-1]) % rate
    if not extra_y and not extra_x:
        return data
    widths = [(0, 0)] * (data.ndim - 2) + [(0, extra_y), (0, extra_x)]
    return np.pad(data, widths, mode="constant", constant_values=0)


class GlobalContext:
    """
    A volume and its rate-downsampled copy, from which aligned patch
    pairs are cut. Built once per (augmented) volume.
    """

    def __init__(self, image: np.ndarray, labels: Optional[np.ndarray], rate: int):
        self.image = image
        self.labels = labels
        self.rate = int(rate)
        self.image_ds = downsample_inplane(image, self.rate)
        self.labels_ds = downsample_labels(labels, self.rate) if labels is not None else None

    @property
    def spatial_shape(self) -> Tuple[int, int, int]:
        return tuple(self.image.shape[1:])

    def global_corner(self, corner: Corner, patch_shape) -> Corner:
        """Corner of the global patch co-centred with the local patch at corner"""
        cz, cy, cx = corner
        _, py, px = patch_shape
        gy = math.floor((cy + py / 2) / self.rate - py / 2 + 0.5)
        gx = math.floor((cx + px / 2) / self.rate - px / 2 + 0.5)
        return (cz, gy, gx)

    def pair(self, corner: Corner, patch_shape) -> PatchPair:
        """Cut the local patch at corner and its global companion"""
        patch_shape = tuple(int(p) for p in patch_shape)
        if any(c < 0 or c + p > n for c, p, n in zip(corner, patch_shape, self.spatial_shape)):
            raise PatchError(f"Local patch at {corner} of size {patch_shape} leaves grid {self.spatial_shape}")
        local_slices = tuple(slice(c, c + p) for c, p in zip(corner, patch_shape))
        g_corner = self.global_corner(corner, patch_shape)

        local = self.image[(slice(None),) + local_slices]
        global_ = crop_zero_extended(self.image_ds, g_corner, patch_shape)
        local_label = global_label = None
        if self.labels is not None:
            local_label = self.labels[local_slices]
            global_label = crop_zero_extended(self.labels_ds[np.newaxis], g_corner, patch_shape)[0]
        return PatchPair(
            local=np.ascontiguousarray(local, dtype=np.float32),
            global_=global_.astype(np.float32, copy=False),
            local_label=None if local_label is None else np.ascontiguousarray(local_label, dtype=np.int64),
            global_label=None if global_label is None else global_label.astype(np.int64),
            local_corner=tuple(int(c) for c in corner),
            global_corner=g_corner,
            rate=self.rate,
        )


def crop_zero_extended(data: np.ndarray, corner: Corner, size) -> np.ndarray:
    """Crop (C, z, y, x) data at corner; the part outside the array reads as 0"""
    out = np.zeros((data.shape[0],) + tuple(size), dtype=data.dtype)
    src, dst = [], []
    for c, s, n in zip(corner, size, data.shape[1:]):
        lo, hi = max(c, 0), min(c + s, n)
        if hi <= lo:
            return out
        src.append(slice(lo, hi))
        dst.append(slice(lo - c, hi - c))
    out[(slice(None),) + tuple(dst)] = data[(slice(None),) + tuple(src)]
    return out


# ==================== Training sampling ====================

def sample_training_pair(image: Volume, label: Volume, rate: int, rng_seed, fg_bias: float = 0.5,
                         patch_shape=(64, 128, 128), jitter: int = 16) -> PatchPair:
    """
    Draw one aligned patch pair for training.

    With probability fg_bias the local patch is centred on a random
    foreground voxel (in-plane jitter +-jitter), otherwise its corner is
    uniform over all valid corners.

    Raises:
        PatchError: volume smaller than the patch, or fg_bias = 1 on a
            volume without foreground
    """
    if not image.geometry.is_close(label.geometry):
        raise GeometryMismatchError("Training image and label must share a grid")
    patch_shape = tuple(int(p) for p in patch_shape)
    _check_fits(image.shape, patch_shape)

    rng = np.random.default_rng(rng_seed)
    labels = label.array
    corner = None
    if rng.random() < fg_bias:
        foreground = np.argwhere(labels > 0)
        if len(foreground) == 0:
            if fg_bias >= 1.0:
                raise PatchError("fg_bias = 1 but the label volume has no foreground")
            logger.warning("No foreground voxels; falling back to a uniform crop")
        else:
            center = foreground[rng.integers(len(foreground))]
            offsets = rng.integers(-jitter, jitter + 1, size=2) if jitter > 0 else np.zeros(2, dtype=int)
            center = center + np.concatenate([[0], offsets])
            corner = tuple(
                int(np.clip(c - p // 2, 0, n - p)) for c, p, n in zip(center, patch_shape, image.shape)
            )
    if corner is None:
        corner = tuple(int(rng.integers(0, n - p + 1)) for p, n in zip(patch_shape, image.shape))

    return GlobalContext(image.data, labels, rate).pair(corner, patch_shape)


def center_pair(image: Volume, label: Optional[Volume], rate: int, patch_shape) -> PatchPair:
    """Deterministic patch pair centred on the volume (validation)"""
    patch_shape = tuple(int(p) for p in patch_shape)
    _check_fits(image.shape, patch_shape)
    corner = tuple((n - p) // 2 for p, n in zip(patch_shape, image.shape))
    labels = label.array if label is not None else None
    return GlobalContext(image.data, labels, rate).pair(corner, patch_shape)


def _check_fits(shape, patch_shape) -> None:
    if any(n < p for n, p in zip(shape, patch_shape)):
        raise PatchError(f"Volume {tuple(shape)} is smaller than patch {tuple(patch_shape)}")


# ==================== Inference tiling ====================

def _axis_starts(length: int, patch: int, stride: int) -> List[int]:
    if length < patch:
        raise PatchError(f"In-plane size {length} is smaller than patch {patch}")
    if stride < 1:
        raise PatchError(f"Stride must be positive, got {stride}")
    starts = list(range(0, length - patch + 1, stride))
    last = length - patch
    if starts[-1] != last:
        # shift the final window inward when its predecessor still reaches it
        if len(starts) > 1 and starts[-2] + patch >= last:
            starts[-1] = last
        else:
            starts.append(last)
    return starts


def inference_grid(geometry: Geometry, patch_inplane=(128, 128), stride_inplane=(64, 64)) -> List[Corner]:
    """
    Patch corners covering every in-plane position of a padded grid.

    Patches span the full z extent, so every corner has z = 0.
    """
    ys = _axis_starts(geometry.shape[1], int(patch_inplane[0]), int(stride_inplane[0]))
    xs = _axis_starts(geometry.shape[2], int(patch_inplane[1]), int(stride_inplane[1]))
    return [(0, y, x) for y in ys for x in xs]


# ==================== Stitching ====================

class PatchStitcher:
    """Accumulates per-patch class probabilities into a full-volume average"""

    def __init__(self, geometry: Geometry, num_classes: int):
        self.geometry = geometry
        self.num_classes = num_classes
        self._sums = np.zeros((num_classes,) + tuple(geometry.shape), dtype=np.float64)
        self._counts = np.zeros(tuple(geometry.shape), dtype=np.int32)

    def add(self, corner: Corner, probabilities: np.ndarray) -> None:
        if probabilities.shape[0] != self.num_classes:
            raise PatchError(f"Patch has {probabilities.shape[0]} classes, expected {self.num_classes}")
        size = probabilities.shape[1:]
        if any(c < 0 or c + s > n for c, s, n in zip(corner, size, self.geometry.shape)):
            raise PatchError(f"Patch at {corner} of size {size} is out of bounds for {self.geometry.shape}")
        region = tuple(slice(c, c + s) for c, s in zip(corner, size))
        self._sums[(slice(None),) + region] += probabilities
        self._counts[region] += 1

    def result(self) -> Volume:
        uncovered = int(np.count_nonzero(self._counts == 0))
        if uncovered:
            raise CoverageError(f"{uncovered} voxels are not covered by any patch")
        averaged = self._sums / self._counts[np.newaxis]
        return Volume(data=averaged.astype(np.float32), geometry=self.geometry, kind=VolumeKind.INTENSITY)


def stitch(patches: Iterable[Tuple[Corner, np.ndarray]], geometry: Geometry, num_classes: int) -> Volume:
    """
    Average overlapping class-probability patches into one volume.

    Raises:
        PatchError: a patch leaves the grid
        CoverageError: some voxel is covered by no patch
    """
    stitcher = PatchStitcher(geometry, num_classes)
    for corner, probabilities in patches:
        stitcher.add(tuple(corner), np.asarray(probabilities))
    return stitcher.result()
