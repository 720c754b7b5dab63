"""
Plain 3D U-Net baseline with the same depth as the residual networks.
"""
from typing import Optional

import torch
import torch.nn as nn

from nucleiseg.networks.blocks import DoubleConv, NetworkOutput, check_patch_divisible, up_conv
from nucleiseg.schemas import ModelSpec


class UNet3D(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        widths = [spec.width(level) for level in range(spec.levels)]
        channels = [spec.in_channels] + widths
        self.encoders = nn.ModuleList(
            DoubleConv(channels[l], channels[l + 1], spec.norm) for l in range(spec.levels)
        )
        self.pool = nn.MaxPool3d(kernel_size=2, stride=2)
        self.ups = nn.ModuleList(up_conv(widths[l + 1], widths[l]) for l in range(spec.levels - 1))
        self.decoders = nn.ModuleList(
            DoubleConv(2 * widths[l], widths[l], spec.norm) for l in range(spec.levels - 1)
        )
        self.head = nn.Conv3d(widths[0], spec.num_classes, kernel_size=1)

    def forward(self, local: torch.Tensor, global_: Optional[torch.Tensor] = None) -> NetworkOutput:
        check_patch_divisible(local.shape[-3:], self.spec.levels)
        skips = []
        x = local
        for level, encoder in enumerate(self.encoders):
            if level > 0:
                x = self.pool(x)
            x = encoder(x)
            skips.append(x)
        for level in reversed(range(self.spec.levels - 1)):
            x = self.ups[level](x)
            x = self.decoders[level](torch.cat([x, skips[level]], dim=1))
        return NetworkOutput(main=self.head(x))
