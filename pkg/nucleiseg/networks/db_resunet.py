"""
Dual-branch residual U-Net.

The local branch is a residual U-Net on the native-resolution patch. The
global branch encodes the wide field-of-view patch with its own residual
encoder and predicts a coarse segmentation through an FCN-8s style head.
At every decoder level (and at the bottleneck) the global features are
cropped to the local field of view, upsampled and concatenated into the
local decoder. The softmax of the auxiliary map joins the last local
features before the final convolution.
"""
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from nucleiseg.exceptions import NetworkConfigError
from nucleiseg.networks.blocks import (
    NetworkOutput,
    ResidualBlock,
    check_patch_divisible,
    crop_upsample,
    fuse_global,
    up_conv,
)
from nucleiseg.networks.resunet import ResidualEncoder
from nucleiseg.schemas import ModelSpec


class FCN8sHead(nn.Module):
    """
    Class scores from the last three encoder levels, merged by progressive
    x2 upsample-and-add, then upsampled to the input grid.
    """

    def __init__(self, widths: List[int], num_classes: int):
        super().__init__()
        levels = len(widths)
        self.used_levels = list(range(max(0, levels - 3), levels))
        self.scores = nn.ModuleList(nn.Conv3d(widths[l], num_classes, kernel_size=1) for l in self.used_levels)
        self.ups = nn.ModuleList(up_conv(num_classes, num_classes) for _ in self.used_levels[1:])
        factor = 2 ** self.used_levels[0]
        self.final_up = (
            nn.ConvTranspose3d(num_classes, num_classes, kernel_size=factor, stride=factor)
            if factor > 1 else nn.Identity()
        )

    def forward(self, features: List[torch.Tensor]) -> torch.Tensor:
        used = [features[l] for l in self.used_levels]
        x = self.scores[-1](used[-1])
        for i in reversed(range(len(used) - 1)):
            x = self.ups[i](x) + self.scores[i](used[i])
        return self.final_up(x)


class DBResUNet(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.rate = spec.rate
        widths = [spec.width(level) for level in range(spec.levels)]
        self.local_encoder = ResidualEncoder(spec.in_channels, widths, spec.norm)
        self.global_encoder = ResidualEncoder(spec.in_channels, widths, spec.norm)
        self.aux_head = FCN8sHead(widths, spec.num_classes)

        self.bottleneck_fusion = ResidualBlock(2 * widths[-1], widths[-1], spec.norm)
        self.ups = nn.ModuleList(up_conv(widths[l + 1], widths[l]) for l in range(spec.levels - 1))
        self.decoders = nn.ModuleList(
            ResidualBlock(3 * widths[l], widths[l], spec.norm) for l in range(spec.levels - 1)
        )
        self.head = nn.Conv3d(widths[0] + spec.num_classes, spec.num_classes, kernel_size=1)

    def forward_global(self, global_: torch.Tensor):
        """Global encoder features and auxiliary logits; independent of the local branch"""
        features = self.global_encoder(global_)
        return features, self.aux_head(features)

    def forward(self, local: torch.Tensor, global_: Optional[torch.Tensor] = None) -> NetworkOutput:
        if global_ is None:
            raise NetworkConfigError("db_resunet needs a global patch")
        if local.shape[-3:] != global_.shape[-3:]:
            raise NetworkConfigError(
                f"Local {tuple(local.shape[-3:])} and global {tuple(global_.shape[-3:])} patches differ in size"
            )
        check_patch_divisible(local.shape[-3:], self.spec.levels)

        global_feats, aux = self.forward_global(global_)
        skips = self.local_encoder(local)

        x = self.bottleneck_fusion(fuse_global([skips[-1]], global_feats[-1], self.rate))
        for level in reversed(range(self.spec.levels - 1)):
            x = self.ups[level](x)
            x = self.decoders[level](fuse_global([x, skips[level]], global_feats[level], self.rate))

        aux_probs = crop_upsample(F.softmax(aux, dim=1), self.rate, x.shape[-3:])
        main = self.head(torch.cat([x, aux_probs], dim=1))
        return NetworkOutput(main=main, aux=aux)
