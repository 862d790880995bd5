"""Patch-style conditional discriminator for the adversarial model."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class DiscriminatorConfig:
    condition_channels: int = 2
    base_filters: int = 64
    n_blocks: int = 4  # stride-2 conv blocks before the 1-channel map


class PatchDiscriminator(nn.Module):
    """Scores (condition, candidate) pairs with a spatial real/fake map."""

    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        self.cfg = cfg or DiscriminatorConfig()
        layers: list[nn.Module] = []
        in_ch = self.cfg.condition_channels + 1
        out_ch = self.cfg.base_filters
        for k in range(self.cfg.n_blocks):
            layers.append(nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1))
            if k > 0:  # no norm on the first block, pix2pix-style
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            in_ch, out_ch = out_ch, min(out_ch * 2, 8 * self.cfg.base_filters)
        layers.append(nn.Conv2d(in_ch, 1, 4, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, condition: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([condition, candidate], dim=1))
