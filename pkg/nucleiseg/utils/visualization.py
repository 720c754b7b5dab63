"""
PNG outputs: label overlays on QSM slices and prediction-vs-manual scatter plots.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from nucleiseg.models import Volume  # noqa: E402
from nucleiseg.schemas import RegressionStats  # noqa: E402

logger = logging.getLogger(__name__)

# background transparent, then one colour per nucleus
LABEL_PALETTE = np.array([
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
], dtype=np.uint8)

VIEWS = ("axial", "coronal", "sagittal")


def _grayscale(slice_2d: np.ndarray, window) -> np.ndarray:
    lo, hi = window
    scaled = (np.clip(slice_2d, lo, hi) - lo) / (hi - lo)
    return (scaled * 255).astype(np.uint8)


def blend_overlay(background: np.ndarray, labels: np.ndarray, window, alpha: float = 0.5) -> Image.Image:
    """RGB image of a 2D slice with labelled voxels tinted by class colour"""
    gray = _grayscale(background, window)
    rgb = np.repeat(gray[..., np.newaxis], 3, axis=-1).astype(np.float32)
    colours = LABEL_PALETTE[np.clip(labels, 0, len(LABEL_PALETTE) - 1)].astype(np.float32)
    mask = (labels > 0)[..., np.newaxis]
    blended = np.where(mask, (1 - alpha) * rgb + alpha * colours, rgb)
    # rows run along y; flip so anterior is up
    return Image.fromarray(np.ascontiguousarray(np.flipud(blended.astype(np.uint8))))


def save_overlays(qsm: Volume, labels: Volume, out_dir: Union[str, Path], prefix: str,
                  window=(-150.0, 250.0)) -> List[Path]:
    """
    Write axial, coronal and sagittal overlays through the foreground centroid
    (the volume centre when no foreground is labelled).

    Returns:
        list of written PNG paths
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image, label_array = qsm.array, labels.array
    foreground = np.argwhere(label_array > 0)
    if len(foreground):
        center = np.round(foreground.mean(axis=0)).astype(int)
    else:
        center = np.array(label_array.shape) // 2

    slices = {
        "axial": (image[center[0]], label_array[center[0]]),
        "coronal": (image[:, center[1], :], label_array[:, center[1], :]),
        "sagittal": (image[:, :, center[2]], label_array[:, :, center[2]]),
    }
    paths = []
    for view in VIEWS:
        background, overlay = slices[view]
        path = out_dir / f"{prefix}_{view}.png"
        blend_overlay(background, overlay, window).save(path)
        paths.append(path)
    logger.info(f"Wrote {len(paths)} overlays for {prefix} to {out_dir}")
    return paths


def scatter_plot(predicted: Sequence[float], manual: Sequence[float], path: Union[str, Path],
                 title: str, unit: str, stats: Optional[RegressionStats] = None,
                 groups: Optional[Sequence[str]] = None) -> Path:
    """Predicted against manual values with the identity and regression lines"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    predicted = np.asarray(predicted, dtype=float)
    manual = np.asarray(manual, dtype=float)

    fig, ax = plt.subplots(figsize=(5, 5))
    if groups is not None:
        for name in dict.fromkeys(groups):
            chosen = np.array([g == name for g in groups])
            ax.scatter(manual[chosen], predicted[chosen], s=14, label=name)
        ax.legend(fontsize=7, loc="upper left")
    else:
        ax.scatter(manual, predicted, s=14)

    if len(manual):
        span = np.array([min(manual.min(), predicted.min()), max(manual.max(), predicted.max())])
        ax.plot(span, span, color="gray", linestyle=":", linewidth=1)
        if stats is not None:
            ax.plot(span, stats.slope * span + stats.intercept, color="black", linewidth=1)
            ax.set_title(f"{title}\ny = {stats.slope:.3f}x + {stats.intercept:.3f}, r = {stats.pearson_r:.3f}")
        else:
            ax.set_title(title)
    ax.set_xlabel(f"manual ({unit})")
    ax.set_ylabel(f"predicted ({unit})")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def read_png_info(path: Union[str, Path]) -> Optional[Dict]:
    """Format and size of a written PNG, or None if unreadable"""
    try:
        with Image.open(path) as img:
            return {"format": img.format, "mode": img.mode, "width": img.width, "height": img.height}
    except Exception:
        return None
