"""
File handling utilities for volume files and run directories.
"""
from pathlib import Path
from typing import Dict, Union
import hashlib
import os

NIFTI_EXTENSIONS = (".nii", ".nii.gz")


def validate_file_extension(filename: str) -> bool:
    """
    Validate if file has a NIfTI extension.

    Args:
        filename: Name of the file

    Returns:
        bool: True if extension is .nii or .nii.gz
    """
    if not filename:
        return False
    return filename.lower().endswith(NIFTI_EXTENSIONS)


def strip_nifti_extension(filename: str) -> str:
    """Base name without .nii / .nii.gz"""
    lowered = filename.lower()
    for extension in sorted(NIFTI_EXTENSIONS, key=len, reverse=True):
        if lowered.endswith(extension):
            return filename[: -len(extension)]
    return filename


def subject_file_paths(root: Union[str, Path], subject_id: str) -> Dict[str, Path]:
    """
    Canonical on-disk layout of one subject.

    Args:
        root: dataset directory
        subject_id: subject identifier

    Returns:
        dict: paths for the qsm, t1 and label volumes
    """
    subject_dir = Path(root) / subject_id
    return {
        "qsm": subject_dir / "qsm.nii.gz",
        "t1": subject_dir / "t1.nii.gz",
        "label": subject_dir / "label.nii.gz",
    }


def ensure_directory(path: Union[str, Path]) -> Path:
    """Create a directory (and parents) if needed"""
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path


def file_digest(path: Union[str, Path], length: int = 12) -> str:
    """
    Short SHA-256 digest of a file, used as a checkpoint identifier.

    Args:
        path: file to hash
        length: number of hex characters kept
    """
    sha = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()[:length]

