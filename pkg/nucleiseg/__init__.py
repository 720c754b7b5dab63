"""
Gray-matter nuclei segmentation toolkit.
"""
from nucleiseg.config import settings

__version__ = "1.0.0"
__all__ = ['settings']
