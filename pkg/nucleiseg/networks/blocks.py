"""
Building blocks shared by the three architectures.
"""
from typing import NamedTuple, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from nucleiseg.exceptions import NetworkConfigError


class NetworkOutput(NamedTuple):
    """Main logits on the local grid; auxiliary logits on the global grid (dual-branch only)"""
    main: torch.Tensor
    aux: Optional[torch.Tensor] = None


def make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm3d(channels)
    if kind == "instance":
        return nn.InstanceNorm3d(channels, affine=True)
    raise NetworkConfigError(f"Unsupported normalization: {kind}")


class ResidualBlock(nn.Module):
    """
    Two 3x3x3 convolutions with normalization; the skip is added before the
    final ReLU. A 1x1x1 projection aligns channels when they differ.
    """

    def __init__(self, in_channels: int, out_channels: int, norm: str = "batch"):
        super().__init__()
        self.conv1 = nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1, bias=False)
        self.norm1 = make_norm(norm, out_channels)
        self.conv2 = nn.Conv3d(out_channels, out_channels, kernel_size=3, padding=1, bias=False)
        self.norm2 = make_norm(norm, out_channels)
        if in_channels != out_channels:
            self.skip = nn.Sequential(
                nn.Conv3d(in_channels, out_channels, kernel_size=1, bias=False),
                make_norm(norm, out_channels),
            )
        else:
            self.skip = nn.Identity()
        self.relu = nn.ReLU(inplace=False)

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        out = self.relu(self.norm1(self.conv1(x)))
        return self.norm2(self.conv2(out))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.relu(self.residual(x) + self.skip(x))


class DoubleConv(nn.Module):
    """(conv 3x3x3 -> norm -> ReLU) x 2, the plain U-Net stage"""

    def __init__(self, in_channels: int, out_channels: int, norm: str = "batch"):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1, bias=False),
            make_norm(norm, out_channels),
            nn.ReLU(inplace=True),
            nn.Conv3d(out_channels, out_channels, kernel_size=3, padding=1, bias=False),
            make_norm(norm, out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


def up_conv(in_channels: int, out_channels: int) -> nn.ConvTranspose3d:
    """Learnable x2 upsampling"""
    return nn.ConvTranspose3d(in_channels, out_channels, kernel_size=2, stride=2)


def crop_upsample(global_feat: torch.Tensor, rate: int, size: Sequence[int]) -> torch.Tensor:
    """
    Crop the central 1/rate of each in-plane axis of a global feature map
    (full z) and resize it trilinearly to size.

    The crop is the part of the global field of view seen by the local patch.
    """
    h, w = global_feat.shape[-2:]
    crop_h, crop_w = h // rate, w // rate
    if crop_h < 1 or crop_w < 1:
        raise NetworkConfigError(
            f"Global feature map {h}x{w} is too small for rate {rate}; increase the patch size"
        )
    top, left = (h - crop_h) // 2, (w - crop_w) // 2
    cropped = global_feat[..., top:top + crop_h, left:left + crop_w]
    if tuple(cropped.shape[-3:]) == tuple(size):
        return cropped
    return F.interpolate(cropped, size=tuple(size), mode="trilinear", align_corners=False)


def fuse_global(local_feats: Sequence[torch.Tensor], global_feat: torch.Tensor, rate: int) -> torch.Tensor:
    """Concatenate local feature maps with the cropped, upsampled global map along channels"""
    size = local_feats[0].shape[-3:]
    return torch.cat(list(local_feats) + [crop_upsample(global_feat, rate, size)], dim=1)


def check_patch_divisible(shape: Sequence[int], levels: int) -> None:
    factor = 2 ** (levels - 1)
    if any(s % factor for s in shape):
        raise NetworkConfigError(
            f"Patch spatial shape {tuple(shape)} must be divisible by {factor} for {levels} levels"
        )
