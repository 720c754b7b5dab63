"""
Core domain entities for the segmentation toolkit.
Defines enumerations, voxel-grid geometry, the class scheme and the
in-memory volume representation shared by every service.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple
import enum
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from nucleiseg.exceptions import LabelRangeError, VolumeError


class VolumeKind(str, enum.Enum):
    """What the voxel values of a volume mean"""
    INTENSITY = "intensity"
    LABEL = "label"


class InputMode(str, enum.Enum):
    """Which modalities are stacked into the network input"""
    QSM_T1 = "qsm_t1"
    QSM_ONLY = "qsm_only"
    T1_ONLY = "t1_only"

    @property
    def channels(self) -> int:
        return 2 if self is InputMode.QSM_T1 else 1


class Family(str, enum.Enum):
    """Network architecture families"""
    UNET3D = "unet3d"
    RESUNET = "resunet"
    DB_RESUNET = "db_resunet"


class Split(str, enum.Enum):
    """Dataset partition of a subject"""
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class Interpolation(str, enum.Enum):
    """Resampling interpolation order"""
    LINEAR = "linear"
    NEAREST = "nearest"

    @property
    def order(self) -> int:
        return 1 if self is Interpolation.LINEAR else 0


NUCLEI_NAMES: Tuple[str, ...] = ("background", "CN", "GP", "PUT", "THA", "SN", "RN", "DN")
BACKGROUND_WEIGHT = 0.1
FOREGROUND_WEIGHT = 0.4


class Geometry(BaseModel):
    """
    Voxel grid geometry in (z, y, x) axis order.

    spacing and origin are in millimetres; origin is the physical position of
    voxel (0, 0, 0).
    """
    model_config = ConfigDict(frozen=True)

    spacing: Tuple[float, float, float]
    shape: Tuple[int, int, int]
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator("spacing")
    @classmethod
    def _positive_spacing(cls, value):
        if any(s <= 0 for s in value):
            raise ValueError(f"spacing must be positive, got {value}")
        return value

    @field_validator("shape")
    @classmethod
    def _positive_shape(cls, value):
        if any(s < 1 for s in value):
            raise ValueError(f"shape components must be >= 1, got {value}")
        return value

    @property
    def physical_extent(self) -> Tuple[float, float, float]:
        return tuple(n * s for n, s in zip(self.shape, self.spacing))

    @property
    def voxel_volume(self) -> float:
        return math.prod(self.spacing)

    def with_shape(self, shape, origin=None) -> "Geometry":
        return Geometry(spacing=self.spacing, shape=tuple(int(s) for s in shape),
                        origin=tuple(origin) if origin is not None else self.origin)

    def voxel_to_physical(self, index) -> np.ndarray:
        """Physical (z, y, x) mm position of a (possibly fractional) voxel index"""
        return np.asarray(self.origin) + np.asarray(index, dtype=np.float64) * np.asarray(self.spacing)

    def index_to_physical_matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix mapping voxel indices to physical mm"""
        matrix = np.eye(4)
        matrix[:3, :3] = np.diag(self.spacing)
        matrix[:3, 3] = self.origin
        return matrix

    def is_close(self, other: "Geometry", tol: float = 1e-6) -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.spacing, other.spacing, atol=tol, rtol=0)
            and np.allclose(self.origin, other.origin, atol=tol, rtol=0)
        )


class ClassScheme(BaseModel):
    """Ordered label set with per-class loss weights"""
    model_config = ConfigDict(frozen=True)

    names: Tuple[str, ...] = NUCLEI_NAMES
    weights: Tuple[float, ...] = (BACKGROUND_WEIGHT,) + (FOREGROUND_WEIGHT,) * (len(NUCLEI_NAMES) - 1)

    @model_validator(mode="after")
    def _check_weights(self):
        if len(self.names) != len(self.weights):
            raise ValueError("class scheme needs one weight per class")
        if any(w <= 0 for w in self.weights):
            raise ValueError("class weights must be positive")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @property
    def foreground(self) -> Tuple[int, ...]:
        return tuple(range(1, self.num_classes))

    def name_of(self, index: int) -> str:
        return self.names[index]


DEFAULT_SCHEME = ClassScheme()


@dataclass(frozen=True)
class Volume:
    """
    Scalar grid with physical geometry.

    data has shape (channels, z, y, x). Intensity volumes are stored as
    float32, label volumes as uint8 with values in [0, num_classes).
    """
    data: np.ndarray
    geometry: Geometry
    kind: VolumeKind = VolumeKind.INTENSITY
    num_classes: int = DEFAULT_SCHEME.num_classes
    orientation: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[np.newaxis]
        if data.ndim != 4:
            raise VolumeError(f"Volume data must be (channels, z, y, x), got shape {data.shape}")
        if tuple(data.shape[1:]) != tuple(self.geometry.shape):
            raise VolumeError(
                f"Data shape {data.shape[1:]} does not match geometry shape {self.geometry.shape}"
            )
        if self.kind is VolumeKind.LABEL:
            data = _validated_labels(data, self.num_classes)
        elif data.dtype != np.float32:
            data = data.astype(np.float32)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.geometry.shape

    @property
    def is_label(self) -> bool:
        return self.kind is VolumeKind.LABEL

    @property
    def array(self) -> np.ndarray:
        """Spatial array of a single-channel volume"""
        if self.channels != 1:
            raise VolumeError(f"Volume has {self.channels} channels; select one first")
        return self.data[0]

    def channel(self, index: int) -> "Volume":
        return self.replace(data=self.data[index:index + 1])

    def replace(self, data: np.ndarray = None, geometry: Geometry = None) -> "Volume":
        return Volume(
            data=self.data if data is None else data,
            geometry=self.geometry if geometry is None else geometry,
            kind=self.kind,
            num_classes=self.num_classes,
            orientation=self.orientation,
        )


def _validated_labels(data: np.ndarray, num_classes: int) -> np.ndarray:
    if data.shape[0] != 1:
        raise LabelRangeError(f"Label volumes must have one channel, got {data.shape[0]}")
    if not np.issubdtype(data.dtype, np.integer):
        if not np.all(np.isfinite(data)) or np.any(np.mod(data, 1) != 0):
            raise LabelRangeError("Label volume contains non-integer values")
    if data.size and (data.min() < 0 or data.max() >= num_classes):
        raise LabelRangeError(
            f"Label values must lie in [0, {num_classes}), found [{data.min()}, {data.max()}]"
        )
    return data.astype(np.uint8)


__all__ = [
    "VolumeKind", "InputMode", "Family", "Split", "Interpolation",
    "Geometry", "ClassScheme", "DEFAULT_SCHEME", "NUCLEI_NAMES", "Volume",
]
