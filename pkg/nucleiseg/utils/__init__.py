"""
Utility functions and helpers.
"""
from nucleiseg.utils.file_handler import (
    validate_file_extension,
    strip_nifti_extension,
    subject_file_paths,
    ensure_directory,
    file_digest
)

from nucleiseg.utils.reproducibility import seed_everything, resolve_device, sub_seed

from nucleiseg.utils.visualization import save_overlays, scatter_plot, read_png_info

__all__ = [
    # File handling
    'validate_file_extension',
    'strip_nifti_extension',
    'subject_file_paths',
    'ensure_directory',
    'file_digest',

    # Reproducibility
    'seed_everything',
    'resolve_device',
    'sub_seed',

    # Visualization
    'save_overlays',
    'scatter_plot',
    'read_png_info',
]
