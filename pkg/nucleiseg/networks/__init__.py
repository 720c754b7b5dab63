"""
Network construction for the three architecture families.
"""
import logging

import torch.nn as nn

from nucleiseg.exceptions import NetworkConfigError
from nucleiseg.models import Family
from nucleiseg.networks.blocks import NetworkOutput, ResidualBlock, crop_upsample, fuse_global
from nucleiseg.networks.db_resunet import DBResUNet, FCN8sHead
from nucleiseg.networks.resunet import ResUNet
from nucleiseg.networks.unet3d import UNet3D
from nucleiseg.schemas import ModelSpec

logger = logging.getLogger(__name__)

_FAMILIES = {
    Family.UNET3D: UNet3D,
    Family.RESUNET: ResUNet,
    Family.DB_RESUNET: DBResUNet,
}


def build(spec: ModelSpec) -> nn.Module:
    """
    Instantiate the network described by spec.

    Raises:
        NetworkConfigError: unsupported family
    """
    try:
        family = Family(spec.family)
    except ValueError:
        raise NetworkConfigError(f"Unsupported network family: {spec.family}")
    model = _FAMILIES[family](spec)
    logger.info(
        f"Built {family.value} (levels={spec.levels}, base_width={spec.resolved_width}, "
        f"in_channels={spec.in_channels}, rate={spec.rate}) with {count_parameters(model):,} parameters"
    )
    return model


def count_parameters(model: nn.Module) -> int:
    """Number of learnable scalars"""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


__all__ = [
    "build", "count_parameters", "NetworkOutput", "ResidualBlock", "crop_upsample",
    "fuse_global", "DBResUNet", "FCN8sHead", "ResUNet", "UNet3D",
]
