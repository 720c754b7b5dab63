"""
Seeding and device selection.
"""
import logging
import random

import numpy as np
import torch

from nucleiseg.config import settings
from nucleiseg.exceptions import ConfigError

logger = logging.getLogger(__name__)


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch generators"""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    logger.debug(f"Seeded generators with {seed}")


def resolve_device(requested: str = None) -> torch.device:
    """
    Pick the compute device: explicit request, then the NUCLEISEG_DEVICE
    setting.

    Raises:
        ConfigError: CUDA requested but unavailable
    """
    name = requested or settings.device
    device = torch.device(name)
    if device.type == "cuda" and not torch.cuda.is_available():
        raise ConfigError(f"Device {name} requested but CUDA is not available")
    return device


def sub_seed(*keys: int) -> np.random.SeedSequence:
    """Independent child seed for a (seed, epoch, index, ...) key"""
    return np.random.SeedSequence([int(k) for k in keys])
