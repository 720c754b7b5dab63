"""
Synthetic dual-channel phantom with bilateral ellipsoidal nuclei.

Physical coordinates are (z, y, x) mm relative to the grid centre; each
nucleus has a right copy at its centre and a left copy mirrored in x.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from tqdm import tqdm

from nucleiseg.exceptions import PhantomError
from nucleiseg.models import NUCLEI_NAMES, Geometry, Split, Volume, VolumeKind
from nucleiseg.schemas import DatasetManifest, ManifestEntry, NucleusSpec, PhantomSpec
from nucleiseg.services.volume_io import save_manifest, save_volume
from nucleiseg.utils.file_handler import ensure_directory, subject_file_paths

logger = logging.getLogger(__name__)

MAX_JITTER_ATTEMPTS = 100
SMALL_AXIS_LIMIT_MM = 4.0


def phantom_geometry(spec: PhantomSpec) -> Geometry:
    """Grid centred on the physical origin"""
    origin = tuple(-(n - 1) / 2 * s for n, s in zip(spec.shape, spec.spacing))
    return Geometry(spacing=spec.spacing, shape=spec.shape, origin=origin)


def _physical_axes(geometry: Geometry) -> List[np.ndarray]:
    return [o + np.arange(n) * s for o, n, s in zip(geometry.origin, geometry.shape, geometry.spacing)]


def ellipsoid_mask(geometry: Geometry, center_mm, semi_axes_mm) -> np.ndarray:
    """Voxels whose centres lie inside the ellipsoid"""
    z, y, x = _physical_axes(geometry)
    dz = ((z - center_mm[0]) / semi_axes_mm[0]) ** 2
    dy = ((y - center_mm[1]) / semi_axes_mm[1]) ** 2
    dx = ((x - center_mm[2]) / semi_axes_mm[2]) ** 2
    return dz[:, None, None] + dy[None, :, None] + dx[None, None, :] <= 1.0


def hemisphere_centers(nucleus: NucleusSpec) -> Tuple[Tuple[float, float, float], Tuple[float, float, float]]:
    cz, cy, cx = nucleus.center_mm
    return (cz, cy, cx), (cz, cy, -cx)


def label_map(spec: PhantomSpec, geometry: Optional[Geometry] = None) -> np.ndarray:
    """
    Exact voxelized label array.

    Raises:
        PhantomError: an ellipsoid leaves the grid, misses every voxel
            centre, overlaps another, or a small nucleus reaches
            small_fraction_limit of the largest class
    """
    geometry = geometry or phantom_geometry(spec)
    low = np.asarray(geometry.origin)
    high = low + (np.asarray(geometry.shape) - 1) * np.asarray(geometry.spacing)
    labels = np.zeros(geometry.shape, dtype=np.uint8)
    claimed = np.zeros(geometry.shape, dtype=bool)

    for nucleus in spec.nuclei:
        class_index = NUCLEI_NAMES.index(nucleus.name)
        axes = np.asarray(nucleus.semi_axes_mm)
        for side, center in zip(("right", "left"), hemisphere_centers(nucleus)):
            c = np.asarray(center)
            if np.any(c - axes < low) or np.any(c + axes > high):
                raise PhantomError(f"{nucleus.name} ({side}) extends beyond the grid")
            mask = ellipsoid_mask(geometry, center, nucleus.semi_axes_mm)
            if not mask.any():
                raise PhantomError(f"{nucleus.name} ({side}) contains no voxel centre")
            if np.any(claimed & mask):
                raise PhantomError(f"{nucleus.name} ({side}) overlaps another nucleus")
            claimed |= mask
            labels[mask] = class_index

    if spec.small_fraction_limit is not None:
        counts = class_voxel_counts(labels)
        largest = max(counts.values())
        for nucleus in spec.nuclei:
            if nucleus.small and counts[nucleus.name] >= spec.small_fraction_limit * largest:
                raise PhantomError(
                    f"{nucleus.name} has {counts[nucleus.name]} voxels, not under "
                    f"{spec.small_fraction_limit} of the largest class ({largest})"
                )
    return labels


def generate(spec: PhantomSpec) -> Tuple[Volume, Volume, Volume]:
    """
    Draw one phantom subject.

    Voxels of each class take that class's Gaussian QSM and T1 intensities
    (std scaled by noise_scale); everything else takes the background
    distribution. Deterministic per spec.seed.

    Returns:
        (qsm, t1, label) on the same centred grid
    """
    geometry = phantom_geometry(spec)
    labels = label_map(spec, geometry)
    rng = np.random.default_rng(spec.seed)
    scale = spec.noise_scale

    qsm = rng.normal(spec.background_qsm_mean, spec.background_qsm_std * scale, size=geometry.shape)
    t1 = rng.normal(spec.background_t1_mean, spec.background_t1_std * scale, size=geometry.shape)
    for nucleus in spec.nuclei:
        mask = labels == NUCLEI_NAMES.index(nucleus.name)
        count = int(mask.sum())
        qsm[mask] = rng.normal(nucleus.qsm_mean, nucleus.qsm_std * scale, size=count)
        t1[mask] = rng.normal(nucleus.t1_mean, nucleus.t1_std * scale, size=count)

    return (
        Volume(data=qsm.astype(np.float32), geometry=geometry),
        Volume(data=t1.astype(np.float32), geometry=geometry),
        Volume(data=labels, geometry=geometry, kind=VolumeKind.LABEL),
    )


def jitter_spec(base: PhantomSpec, rng: np.random.Generator, seed: int) -> PhantomSpec:
    """Per-subject variant: centres move up to +-center_jitter_mm, semi-axes scale by up to +-axis_jitter"""
    nuclei = []
    for nucleus in base.nuclei:
        shift = rng.uniform(-base.center_jitter_mm, base.center_jitter_mm, size=3)
        factors = rng.uniform(1 - base.axis_jitter, 1 + base.axis_jitter, size=3)
        axes = np.asarray(nucleus.semi_axes_mm) * factors
        if nucleus.small:
            axes = np.minimum(axes, SMALL_AXIS_LIMIT_MM)
        nuclei.append(nucleus.model_copy(update={
            "center_mm": tuple(float(v) for v in np.asarray(nucleus.center_mm) + shift),
            "semi_axes_mm": tuple(float(v) for v in axes),
        }))
    return base.model_copy(update={"nuclei": nuclei, "seed": seed})


def default_split_counts(n_subjects: int) -> Tuple[int, int, int]:
    """(train, val, test): one subject trains; two give one val; otherwise about a sixth each for val and test"""
    if n_subjects < 1:
        raise PhantomError(f"Need at least one subject, got {n_subjects}")
    if n_subjects == 1:
        return 1, 0, 0
    if n_subjects == 2:
        return 1, 1, 0
    held_out = max(1, n_subjects // 6)
    return n_subjects - 2 * held_out, held_out, held_out


def generate_dataset(n_subjects: int, base_spec: PhantomSpec, seed: int, out_dir,
                     split_counts: Optional[Sequence[int]] = None) -> DatasetManifest:
    """
    Write n jittered phantom subjects as NIfTI plus manifest.json.

    Subjects are assigned to train, then val, then test in order.

    Raises:
        PhantomError: n < 1, split counts not summing to n, or a subject
            whose jitter keeps producing invalid layouts
    """
    counts = tuple(split_counts) if split_counts is not None else default_split_counts(n_subjects)
    if n_subjects < 1:
        raise PhantomError(f"Need at least one subject, got {n_subjects}")
    if len(counts) != 3 or sum(counts) != n_subjects or min(counts) < 0:
        raise PhantomError(f"Split counts {counts} do not partition {n_subjects} subjects")
    splits = [Split.TRAIN] * counts[0] + [Split.VAL] * counts[1] + [Split.TEST] * counts[2]

    out_dir = ensure_directory(out_dir)
    children = np.random.SeedSequence(seed).spawn(n_subjects)
    entries: List[ManifestEntry] = []
    for index in tqdm(range(n_subjects), desc="phantom", disable=None):
        subject_id = f"subject_{index:03d}"
        rng = np.random.default_rng(children[index])
        volumes = None
        for attempt in range(1, MAX_JITTER_ATTEMPTS + 1):
            subject_seed = int(rng.integers(0, 2**31 - 1))
            spec = jitter_spec(base_spec, rng, subject_seed)
            try:
                volumes = generate(spec)
                break
            except PhantomError as e:
                logger.debug(f"{subject_id}: attempt {attempt} rejected ({e})")
        if volumes is None:
            raise PhantomError(f"{subject_id}: no valid layout after {MAX_JITTER_ATTEMPTS} attempts")

        paths = subject_file_paths(out_dir, subject_id)
        for name, volume in zip(("qsm", "t1", "label"), volumes):
            save_volume(volume, paths[name])
        entries.append(ManifestEntry(
            id=subject_id,
            qsm=str(paths["qsm"].relative_to(out_dir)),
            t1=str(paths["t1"].relative_to(out_dir)),
            label=str(paths["label"].relative_to(out_dir)),
            split=splits[index],
        ))

    manifest = DatasetManifest(entries=entries, root=str(out_dir))
    save_manifest(manifest, Path(out_dir) / "manifest.json")
    logger.info(f"Wrote {n_subjects} phantom subjects to {out_dir}: {manifest.split_counts()}")
    return manifest


def class_voxel_counts(labels: np.ndarray) -> Dict[str, int]:
    return {name: int((labels == i).sum()) for i, name in enumerate(NUCLEI_NAMES) if i > 0}
