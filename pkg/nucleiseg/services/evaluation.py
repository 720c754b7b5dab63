"""
Full-volume inference and quantitative evaluation: Dice, ROI
susceptibility and volume, regression against manual labels and an
inference timing harness.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import json
import logging
import time

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from scipy import stats as sp_stats
from tqdm import tqdm

from nucleiseg.exceptions import ChannelMismatchError, EvaluationError, GeometryMismatchError, PatchError
from nucleiseg.models import ClassScheme, Geometry, InputMode, Split, Volume, VolumeKind
from nucleiseg.networks.checkpoint import Checkpoint
from nucleiseg.schemas import (
    DatasetManifest,
    EvaluationSummary,
    InferenceConfig,
    PreprocessConfig,
    RegressionStats,
    RoiMeasurement,
    TimingStats,
)
from nucleiseg.services.patching import GlobalContext, PatchStitcher, inference_grid
from nucleiseg.services.preprocess import crop_to_shape, prepare_volumes
from nucleiseg.services.volume_io import load_volume
from nucleiseg.utils.file_handler import ensure_directory
from nucleiseg.utils.visualization import scatter_plot

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentationResult:
    """Predicted labels with the probabilities they were argmaxed from"""
    label: Volume
    probabilities: Volume
    checkpoint_id: str
    seconds: float


# ==================== Inference ====================

@torch.no_grad()
def predict_volume(model: nn.Module, image: Volume, patch_shape, inference: InferenceConfig = None,
                   device="cpu", pad_before=None, original_geometry: Optional[Geometry] = None,
                   checkpoint_id: str = "") -> SegmentationResult:
    """
    Tile a preprocessed volume, softmax each patch, average overlaps and argmax.

    Args:
        model: network in any mode; evaluation mode is set here
        image: preprocessed (C, z, y, x) volume on the padded grid
        patch_shape: (z, y, x) patch size the network was trained on; z must match the volume
        inference: stride and batch size
        pad_before, original_geometry: when given, outputs are cropped back to the acquisition grid

    Raises:
        ChannelMismatchError: channel count differs from the model's
        PatchError: volume z differs from the patch z
    """
    inference = inference or InferenceConfig()
    spec = model.spec
    if image.channels != spec.in_channels:
        raise ChannelMismatchError(f"Model expects {spec.in_channels} input channels, volume has {image.channels}")
    patch_shape = tuple(int(p) for p in patch_shape)
    if image.shape[0] != patch_shape[0]:
        raise PatchError(f"Volume z extent {image.shape[0]} differs from patch z {patch_shape[0]}")

    start = time.perf_counter()
    model.eval()
    rate = spec.rate if spec.uses_global_branch else 1
    context = GlobalContext(image.data, None, rate)
    corners = inference_grid(image.geometry, patch_shape[1:], inference.stride_inplane)
    stitcher = PatchStitcher(image.geometry, spec.num_classes)

    for first in range(0, len(corners), inference.batch_size):
        chunk = corners[first:first + inference.batch_size]
        pairs = [context.pair(corner, patch_shape) for corner in chunk]
        local = torch.from_numpy(np.stack([p.local for p in pairs])).to(device)
        global_ = torch.from_numpy(np.stack([p.global_ for p in pairs])).to(device) if spec.uses_global_branch else None
        probabilities = torch.softmax(model(local, global_).main, dim=1).double().cpu().numpy()
        for corner, patch in zip(chunk, probabilities):
            stitcher.add(corner, patch)

    probs = stitcher.result()
    labels = Volume(
        data=np.argmax(probs.data, axis=0).astype(np.uint8),
        geometry=probs.geometry,
        kind=VolumeKind.LABEL,
        num_classes=spec.num_classes,
    )
    if pad_before is not None and original_geometry is not None:
        probs = crop_to_shape(probs, pad_before, original_geometry.shape).replace(geometry=original_geometry)
        labels = crop_to_shape(labels, pad_before, original_geometry.shape).replace(geometry=original_geometry)
    seconds = time.perf_counter() - start
    logger.debug(f"Predicted {len(corners)} patches in {seconds:.3f}s")
    return SegmentationResult(label=labels, probabilities=probs, checkpoint_id=checkpoint_id, seconds=seconds)


# ==================== Metrics ====================

def _check_same_grid(a: Volume, b: Volume, what: str) -> None:
    if not a.geometry.is_close(b.geometry):
        raise GeometryMismatchError(f"{what}: grids {a.shape} and {b.shape} differ")


def dice(predicted: Volume, truth: Volume, class_index: int) -> float:
    """
    Dice coefficient 2|P∩G| / (|P| + |G|) for one class.

    Both masks empty gives 1.0; exactly one empty gives 0.0.
    """
    _check_same_grid(predicted, truth, "dice")
    if not 0 <= class_index < predicted.num_classes:
        raise EvaluationError(f"Class index {class_index} out of range")
    p = predicted.array == class_index
    g = truth.array == class_index
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def dice_per_class(predicted: Volume, truth: Volume, scheme: ClassScheme) -> Dict[str, float]:
    return {scheme.name_of(c): dice(predicted, truth, c) for c in scheme.foreground}


def roi_stats(labels: Volume, qsm_original: Volume) -> Dict[int, RoiMeasurement]:
    """
    Mean susceptibility and volume of every foreground class present.

    Classes without voxels are absent from the result.
    """
    _check_same_grid(labels, qsm_original, "roi_stats")
    values = qsm_original.data[0]
    label_array = labels.array
    voxel_volume = labels.geometry.voxel_volume
    result = {}
    for class_index in range(1, labels.num_classes):
        mask = label_array == class_index
        count = int(mask.sum())
        if count == 0:
            continue
        result[class_index] = RoiMeasurement(
            mean_susceptibility=float(values[mask].mean(dtype=np.float64)),
            volume_mm3=count * voxel_volume,
            voxel_count=count,
        )
    return result


def regression_stats(predicted: Sequence[float], manual: Sequence[float]) -> RegressionStats:
    """
    Least-squares line predicted = slope * manual + intercept, with Pearson r.

    Raises:
        EvaluationError: fewer than 2 pairs or constant manual values
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    manual = np.asarray(manual, dtype=np.float64)
    if predicted.shape != manual.shape:
        raise EvaluationError("Predicted and manual values must pair up")
    if len(manual) < 2:
        raise EvaluationError(f"Regression needs at least 2 pairs, got {len(manual)}")
    if np.ptp(manual) == 0:
        raise EvaluationError("Manual values have zero variance")
    fit = sp_stats.linregress(manual, predicted)
    return RegressionStats(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        pearson_r=float(fit.rvalue),
        n=len(manual),
    )


def time_inference(run: Callable, volumes: Sequence, repetitions: int = 1, device: str = "cpu") -> TimingStats:
    """
    Wall-clock seconds per volume of run(volume).

    One warm-up call on the first volume is excluded. Reports only; never asserts.
    """
    if not volumes:
        raise EvaluationError("Timing needs at least one volume")
    repetitions = max(1, int(repetitions))
    run(volumes[0])
    samples = []
    for _ in range(repetitions):
        for volume in volumes:
            start = time.perf_counter()
            run(volume)
            samples.append(time.perf_counter() - start)
    timings = np.asarray(samples)
    return TimingStats(
        mean_seconds=float(timings.mean()),
        std_seconds=float(timings.std(ddof=0)),
        repetitions=repetitions,
        volumes=len(volumes),
        device=str(device),
    )


# ==================== Reports ====================

REPORT_COLUMNS = [
    "subject", "class", "dice",
    "mean_susceptibility_predicted", "mean_susceptibility_manual",
    "volume_predicted_mm3", "volume_manual_mm3",
]


def _safe_regression(predicted, manual, what: str) -> Optional[RegressionStats]:
    try:
        return regression_stats(predicted, manual)
    except EvaluationError as e:
        logger.warning(f"Skipping {what} regression: {e}")
        return None


def evaluate_split(manifest: DatasetManifest, split: Split, out_dir, checkpoint: Optional[Checkpoint] = None,
                   preprocess: Optional[PreprocessConfig] = None, inference: Optional[InferenceConfig] = None,
                   patch_shape=(64, 128, 128), device="cpu", oracle: bool = False,
                   repetitions: int = 1, scheme: Optional[ClassScheme] = None) -> EvaluationSummary:
    """
    Evaluate every subject of a split and write the report files.

    Writes evaluation.csv (subject x class rows), summary.json and
    susceptibility/volume scatter PNGs into out_dir. In oracle mode the
    manual labels pass through as predictions and no model is needed.

    Raises:
        EvaluationError: empty split, missing labels or missing checkpoint
    """
    if checkpoint is None and not oracle:
        raise EvaluationError("A checkpoint is required unless oracle mode is set")
    entries = manifest.entries_for(split)
    if not entries:
        raise EvaluationError(f"Split {split.value} has no subjects")
    missing = [e.id for e in entries if e.label is None]
    if missing:
        raise EvaluationError(f"Subjects without labels cannot be evaluated: {missing}")

    if checkpoint is not None:
        preprocess = checkpoint.preprocess
        scheme = checkpoint.class_scheme
    preprocess = preprocess or PreprocessConfig()
    scheme = scheme or ClassScheme()
    inference = inference or InferenceConfig()
    out_dir = ensure_directory(out_dir)
    affine = manifest.affine_matrix()

    rows: List[Dict] = []
    raw_inputs = []
    for entry in tqdm(entries, desc=f"evaluate {split.value}", disable=None):
        qsm = load_volume(manifest.resolve(entry.qsm))
        t1 = load_volume(manifest.resolve(entry.t1)) if entry.t1 and preprocess.input_mode is not InputMode.QSM_ONLY else None
        truth = load_volume(manifest.resolve(entry.label), VolumeKind.LABEL, num_classes=scheme.num_classes)

        if oracle:
            predicted = truth
        else:
            prepared = prepare_volumes(qsm, t1, truth, preprocess, affine, subject_id=entry.id)
            predicted = predict_volume(
                checkpoint.model, prepared.image, patch_shape, inference, device,
                pad_before=prepared.pad_before, original_geometry=prepared.original_geometry,
                checkpoint_id=checkpoint.checkpoint_id,
            ).label
            raw_inputs.append((entry.id, qsm, t1))

        roi_pred = roi_stats(predicted, qsm)
        roi_manual = roi_stats(truth, qsm)
        for class_index in scheme.foreground:
            pred, man = roi_pred.get(class_index), roi_manual.get(class_index)
            rows.append({
                "subject": entry.id,
                "class": scheme.name_of(class_index),
                "dice": dice(predicted, truth, class_index),
                "mean_susceptibility_predicted": pred.mean_susceptibility if pred else None,
                "mean_susceptibility_manual": man.mean_susceptibility if man else None,
                "volume_predicted_mm3": pred.volume_mm3 if pred else None,
                "volume_manual_mm3": man.volume_mm3 if man else None,
            })

    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    report.to_csv(out_dir / "evaluation.csv", index=False)

    per_class_dice = {
        name: float(group["dice"].mean()) for name, group in report.groupby("class", sort=False)
    }
    paired = report.dropna()
    regression = {
        "susceptibility": _safe_regression(
            paired["mean_susceptibility_predicted"], paired["mean_susceptibility_manual"], "susceptibility"),
        "volume": _safe_regression(paired["volume_predicted_mm3"], paired["volume_manual_mm3"], "volume"),
    }
    per_class_regression = {}
    for name, group in paired.groupby("class", sort=False):
        per_class_regression[name] = {
            "susceptibility": _safe_regression(
                group["mean_susceptibility_predicted"], group["mean_susceptibility_manual"], f"{name} susceptibility"),
            "volume": _safe_regression(group["volume_predicted_mm3"], group["volume_manual_mm3"], f"{name} volume"),
        }

    scatter_plot(paired["mean_susceptibility_predicted"], paired["mean_susceptibility_manual"],
                 out_dir / "scatter_susceptibility.png", "Mean susceptibility", "ppb",
                 regression["susceptibility"], groups=list(paired["class"]))
    scatter_plot(paired["volume_predicted_mm3"], paired["volume_manual_mm3"],
                 out_dir / "scatter_volume.png", "ROI volume", "mm³",
                 regression["volume"], groups=list(paired["class"]))

    timing = None
    if not oracle:
        def run(item):
            _, qsm, t1 = item
            prepared = prepare_volumes(qsm, t1, None, preprocess, affine)
            predict_volume(checkpoint.model, prepared.image, patch_shape, inference, device,
                           pad_before=prepared.pad_before, original_geometry=prepared.original_geometry)

        timing = time_inference(run, raw_inputs, repetitions, device=str(device))
        logger.info(f"Inference time per volume: {timing.formatted()} on {timing.device}")

    summary = EvaluationSummary(
        split=split,
        checkpoint_id=checkpoint.checkpoint_id if checkpoint is not None else None,
        oracle=oracle,
        n_subjects=len(entries),
        per_class_dice=per_class_dice,
        mean_foreground_dice=float(np.mean(list(per_class_dice.values()))),
        regression=regression,
        per_class_regression=per_class_regression,
        timing=timing,
        inference_time=timing.formatted() if timing else None,
    )
    (out_dir / "summary.json").write_text(json.dumps(summary.model_dump(mode="json"), indent=2))
    logger.info(
        f"Evaluated {len(entries)} {split.value} subjects: mean foreground Dice {summary.mean_foreground_dice:.4f}"
    )
    return summary
