"""
Pydantic schemas for configuration, manifests and reports.
These schemas define every structure that crosses a file boundary.
"""
from pathlib import Path
from typing import Dict, List, Optional, Tuple
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from nucleiseg.models import (
    DEFAULT_SCHEME,
    NUCLEI_NAMES,
    ClassScheme,
    Family,
    InputMode,
    Split,
)


# ==================== Dataset Schemas ====================

class ManifestEntry(BaseModel):
    """One subject of a dataset manifest"""
    id: str = Field(..., min_length=1)
    qsm: str
    t1: Optional[str] = None
    label: Optional[str] = None
    split: Split


class DatasetManifest(BaseModel):
    """
    Per-subject file paths with their split assignment.

    Relative paths are resolved against root, which defaults to the directory
    holding the manifest file. affine is an optional 4x4 row-major matrix
    acting on physical (z, y, x) mm coordinates, mapping T1WI space to the
    SWI/QSM space.
    """
    entries: List[ManifestEntry]
    affine: Optional[List[float]] = None
    root: Optional[str] = None

    @field_validator("affine")
    @classmethod
    def _sixteen_numbers(cls, value):
        if value is not None and len(value) != 16:
            raise ValueError(f"affine must hold 16 numbers, got {len(value)}")
        return value

    @model_validator(mode="after")
    def _unique_ids(self):
        ids = [entry.id for entry in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("subject ids in a manifest must be unique")
        return self

    def split_counts(self) -> Dict[str, int]:
        counts = {split.value: 0 for split in Split}
        for entry in self.entries:
            counts[entry.split.value] += 1
        return counts

    def entries_for(self, split: Split) -> List[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == split]

    def affine_matrix(self) -> np.ndarray:
        if self.affine is None:
            return np.eye(4)
        return np.asarray(self.affine, dtype=np.float64).reshape(4, 4)

    def resolve(self, relative: Optional[str]) -> Optional[Path]:
        if relative is None:
            return None
        path = Path(relative)
        if not path.is_absolute() and self.root:
            path = Path(self.root) / path
        return path


# ==================== Pipeline Configuration Schemas ====================

class PreprocessConfig(BaseModel):
    """Intensity windows, padded matrix size and channel selection"""
    qsm_window: Tuple[float, float] = (-150.0, 250.0)
    t1_window: Tuple[float, float] = (0.0, 800.0)
    target_shape: Tuple[int, int, int] = (64, 336, 448)
    input_mode: InputMode = InputMode.QSM_T1

    @field_validator("qsm_window", "t1_window")
    @classmethod
    def _ordered_window(cls, value):
        if value[1] <= value[0]:
            raise ValueError(f"window upper bound must exceed lower bound, got {value}")
        return value


class AugmentSpec(BaseModel):
    """Random flips along each axis and in-plane rotation about z"""
    enabled: bool = True
    flip_prob: float = Field(0.5, ge=0.0, le=1.0)
    max_rotation_deg: float = Field(30.0, ge=0.0, le=180.0)


DEFAULT_BASE_WIDTHS = {
    Family.UNET3D: 64,
    Family.RESUNET: 32,
    Family.DB_RESUNET: 16,
}

SUPPORTED_RATES = (1, 2, 4)


class ModelSpec(BaseModel):
    """
    Architecture family and size.

    base_width is the channel count at level 0; it doubles per level. When
    omitted it stays None and the frozen per-family default applies, so a
    dumped config keeps following the family: db_resunet branches are
    exactly half as wide as resunet.
    """
    family: Family = Family.DB_RESUNET
    in_channels: int = Field(2, ge=1, le=2)
    num_classes: int = Field(DEFAULT_SCHEME.num_classes, ge=2)
    levels: int = Field(4, ge=2, le=6)
    base_width: Optional[int] = Field(None, ge=1)
    rate: int = 2
    norm: str = "batch"

    @field_validator("rate")
    @classmethod
    def _supported_rate(cls, value):
        if value not in SUPPORTED_RATES:
            raise ValueError(f"rate must be one of {SUPPORTED_RATES}, got {value}")
        return value

    @field_validator("norm")
    @classmethod
    def _supported_norm(cls, value):
        if value not in ("batch", "instance"):
            raise ValueError(f"norm must be 'batch' or 'instance', got {value!r}")
        return value

    @property
    def resolved_width(self) -> int:
        if self.base_width is None:
            return DEFAULT_BASE_WIDTHS[self.family]
        return self.base_width

    def width(self, level: int) -> int:
        return self.resolved_width * 2 ** level

    @property
    def uses_global_branch(self) -> bool:
        return self.family is Family.DB_RESUNET


class LossConfig(BaseModel):
    """Class weights and the global-loss tradeoff"""
    class_weights: Tuple[float, ...] = DEFAULT_SCHEME.weights
    lambda_g: float = Field(1.0, ge=0.0)

    @field_validator("class_weights")
    @classmethod
    def _positive_weights(cls, value):
        if any(w <= 0 for w in value):
            raise ValueError("class weights must be positive")
        return value


class TrainConfig(BaseModel):
    """Optimizer, schedule and sampling hyperparameters"""
    max_epochs: int = Field(500, ge=1)
    batch_size: int = Field(4, ge=1)
    learning_rate: float = Field(3e-4, gt=0)
    betas: Tuple[float, float] = (0.9, 0.99)
    weight_decay: float = Field(3e-5, ge=0)
    patience: int = Field(10, ge=1)
    improvement_threshold: float = Field(1e-6, ge=0)
    lr_factor: float = Field(math.sqrt(0.1), gt=0, lt=1)
    min_lr: float = Field(1e-6, gt=0)
    patches_per_subject: int = Field(2, ge=1)
    fg_bias: float = Field(0.5, ge=0.0, le=1.0)
    jitter: int = Field(16, ge=0)
    patch_shape: Tuple[int, int, int] = (64, 128, 128)
    augment: AugmentSpec = Field(default_factory=AugmentSpec)
    num_workers: Optional[int] = Field(None, ge=0)


class InferenceConfig(BaseModel):
    """Sliding-window tiling for full-volume prediction"""
    stride_inplane: Tuple[int, int] = (64, 64)
    batch_size: int = Field(2, ge=1)


class NucleusSpec(BaseModel):
    """
    One bilateral nucleus of the phantom.

    center_mm is the right-hemisphere centre relative to the grid centre in
    (z, y, x) mm; the left copy mirrors x.
    """
    name: str
    center_mm: Tuple[float, float, float]
    semi_axes_mm: Tuple[float, float, float]
    qsm_mean: float = Field(..., ge=-150.0, le=250.0)
    qsm_std: float = Field(10.0, ge=0.0)
    t1_mean: float
    t1_std: float = Field(20.0, ge=0.0)
    small: bool = False

    @model_validator(mode="after")
    def _small_is_small(self):
        if any(a <= 0 for a in self.semi_axes_mm):
            raise ValueError(f"{self.name}: semi-axes must be positive")
        if self.small and max(self.semi_axes_mm) > 4.0:
            raise ValueError(f"{self.name}: small structures need semi-axes <= 4 mm")
        return self


def default_nuclei() -> List[NucleusSpec]:
    """Basal-ganglia, midbrain and cerebellar layout; QSM separates, T1 is weak for small nuclei"""
    return [
        NucleusSpec(name="CN", center_mm=(20, -22, 13), semi_axes_mm=(8, 10, 5),
                    qsm_mean=60, qsm_std=12, t1_mean=620, t1_std=25),
        NucleusSpec(name="GP", center_mm=(4, -8, 18), semi_axes_mm=(5, 7, 3),
                    qsm_mean=170, qsm_std=15, t1_mean=660, t1_std=25),
        NucleusSpec(name="PUT", center_mm=(8, -8, 30), semi_axes_mm=(8, 14, 5),
                    qsm_mean=70, qsm_std=12, t1_mean=600, t1_std=25),
        NucleusSpec(name="THA", center_mm=(8, 18, 10), semi_axes_mm=(10, 15, 8),
                    qsm_mean=25, qsm_std=10, t1_mean=560, t1_std=25),
        NucleusSpec(name="SN", center_mm=(-10, 12, 8), semi_axes_mm=(3, 4, 3),
                    qsm_mean=140, qsm_std=15, t1_mean=505, t1_std=25, small=True),
        NucleusSpec(name="RN", center_mm=(-10, 0, 5), semi_axes_mm=(3, 3, 3),
                    qsm_mean=110, qsm_std=15, t1_mean=500, t1_std=25, small=True),
        NucleusSpec(name="DN", center_mm=(-36, 40, 14), semi_axes_mm=(3, 4, 4),
                    qsm_mean=115, qsm_std=15, t1_mean=495, t1_std=25, small=True),
    ]


class PhantomSpec(BaseModel):
    """Synthetic dual-channel head phantom with bilateral ellipsoidal nuclei"""
    shape: Tuple[int, int, int] = (64, 168, 224)
    spacing: Tuple[float, float, float] = (2.0, 1.0268, 1.0268)
    nuclei: List[NucleusSpec] = Field(default_factory=default_nuclei)
    background_qsm_mean: float = 0.0
    background_qsm_std: float = 15.0
    background_t1_mean: float = 480.0
    background_t1_std: float = 30.0
    noise_scale: float = Field(1.0, ge=0.0)
    seed: int = 0
    center_jitter_mm: float = Field(3.0, ge=0.0)
    axis_jitter: float = Field(0.1, ge=0.0, lt=1.0)
    # each small nucleus must stay under this fraction of the largest class; None disables the check
    small_fraction_limit: Optional[float] = Field(0.05, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _all_nuclei_present(self):
        names = [nucleus.name for nucleus in self.nuclei]
        if sorted(names) != sorted(NUCLEI_NAMES[1:]):
            raise ValueError(f"phantom must define each of {NUCLEI_NAMES[1:]} exactly once, got {names}")
        return self

    def nucleus(self, name: str) -> NucleusSpec:
        return next(n for n in self.nuclei if n.name == name)


class PathsConfig(BaseModel):
    """Input and output locations of a run"""
    manifest: Optional[str] = None
    out_dir: Optional[str] = None
    checkpoint: Optional[str] = None


class RunConfig(BaseModel):
    """Everything a run needs; serializable and sufficient to reproduce it"""
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    model: ModelSpec = Field(default_factory=ModelSpec)
    loss: LossConfig = Field(default_factory=LossConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    phantom: PhantomSpec = Field(default_factory=PhantomSpec)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    seed: int = 0
    device: Optional[str] = None

    @model_validator(mode="after")
    def _consistent_channels(self):
        if self.model.in_channels != self.preprocess.input_mode.channels:
            self.model = self.model.model_copy(update={"in_channels": self.preprocess.input_mode.channels})
        if len(self.loss.class_weights) != self.model.num_classes:
            raise ValueError(
                f"{len(self.loss.class_weights)} class weights for {self.model.num_classes} classes"
            )
        return self

    @property
    def class_scheme(self) -> ClassScheme:
        return ClassScheme(names=NUCLEI_NAMES[:self.model.num_classes], weights=self.loss.class_weights)


# ==================== Report Schemas ====================

class EpochRecord(BaseModel):
    """One row of the training metric log; the loss terms are written as L_p and L_g"""
    model_config = ConfigDict(populate_by_name=True)

    epoch: int
    train_loss: float
    val_loss: float
    loss_p: float = Field(..., alias="L_p")
    loss_g: Optional[float] = Field(None, alias="L_g")
    lr: float


class RoiMeasurement(BaseModel):
    """Quantitative measurements over one nucleus mask"""
    mean_susceptibility: float
    volume_mm3: float
    voxel_count: int


class RegressionStats(BaseModel):
    """Least-squares fit of predicted against manual values"""
    slope: float
    intercept: float
    pearson_r: float
    n: int


class TimingStats(BaseModel):
    """Per-volume wall-clock inference time"""
    mean_seconds: float
    std_seconds: float
    repetitions: int
    volumes: int
    device: str

    def formatted(self) -> str:
        return f"{self.mean_seconds:.3f}±{self.std_seconds:.3f}s"


class EvaluationSummary(BaseModel):
    """JSON summary of one evaluated split"""
    split: Split
    checkpoint_id: Optional[str] = None
    oracle: bool = False
    n_subjects: int
    per_class_dice: Dict[str, float]
    mean_foreground_dice: float
    regression: Dict[str, Optional[RegressionStats]]
    per_class_regression: Dict[str, Dict[str, Optional[RegressionStats]]] = Field(default_factory=dict)
    timing: Optional[TimingStats] = None
    inference_time: Optional[str] = None
