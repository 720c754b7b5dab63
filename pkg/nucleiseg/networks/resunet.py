"""
Residual U-Net: residual-block encoder with 2x2x2 max pooling and a
symmetric decoder with transpose-convolution upsampling and skip
concatenation.
"""
from typing import List, Optional

import torch
import torch.nn as nn

from nucleiseg.networks.blocks import NetworkOutput, ResidualBlock, check_patch_divisible, up_conv
from nucleiseg.schemas import ModelSpec


class ResidualEncoder(nn.Module):
    """Residual-block encoder; returns the feature map of every level, shallowest first"""

    def __init__(self, in_channels: int, widths: List[int], norm: str = "batch"):
        super().__init__()
        channels = [in_channels] + list(widths)
        self.stages = nn.ModuleList(
            ResidualBlock(channels[i], channels[i + 1], norm) for i in range(len(widths))
        )
        self.pool = nn.MaxPool3d(kernel_size=2, stride=2)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        features = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.pool(x)
            x = stage(x)
            features.append(x)
        return features


class ResUNet(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        widths = [spec.width(level) for level in range(spec.levels)]
        self.encoder = ResidualEncoder(spec.in_channels, widths, spec.norm)
        self.ups = nn.ModuleList(up_conv(widths[l + 1], widths[l]) for l in range(spec.levels - 1))
        self.decoders = nn.ModuleList(
            ResidualBlock(2 * widths[l], widths[l], spec.norm) for l in range(spec.levels - 1)
        )
        self.head = nn.Conv3d(widths[0], spec.num_classes, kernel_size=1)

    def forward(self, local: torch.Tensor, global_: Optional[torch.Tensor] = None) -> NetworkOutput:
        check_patch_divisible(local.shape[-3:], self.spec.levels)
        skips = self.encoder(local)
        x = skips[-1]
        for level in reversed(range(self.spec.levels - 1)):
            x = self.ups[level](x)
            x = self.decoders[level](torch.cat([x, skips[level]], dim=1))
        return NetworkOutput(main=self.head(x))
