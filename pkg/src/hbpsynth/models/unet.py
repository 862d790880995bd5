"""Encoder-decoder generator shared by all three model families.

Five encoder blocks with filter doubling (16..256), a 512-filter bottleneck,
and a mirrored decoder using bilinear upsampling followed by convolutions
(no transposed convolutions, avoiding checkerboard artifacts). An optional
sinusoidal timestep embedding turns the same network into the diffusion
denoiser: the embedding is projected per block and added after each encoder
block's first convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from ..errors import DomainError


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 2
    out_channels: int = 1
    base_filters: int = 16
    depth: int = 5
    bottleneck_filters: int = 512
    time_dim: int | None = None  # set for the diffusion denoiser

    def __post_init__(self):
        if self.depth < 1 or self.base_filters < 1:
            raise DomainError("depth and base_filters must be positive")

    @property
    def encoder_filters(self) -> tuple[int, ...]:
        return tuple(self.base_filters * 2**k for k in range(self.depth))

    @property
    def downsample_factor(self) -> int:
        return 2**self.depth


def _conv_bn_relu(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class _TimestepEmbedding(nn.Module):
    """Sinusoidal position encoding of the diffusion step, with a small MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0)
            * torch.arange(half, dtype=torch.get_default_dtype(), device=t.device)
            / half
        )
        args = t.to(freqs.dtype)[:, None] * freqs[None, :]
        enc = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
        return self.mlp(enc.to(next(self.mlp.parameters()).dtype))


class _EncoderBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int | None):
        super().__init__()
        self.conv1 = _conv_bn_relu(in_ch, out_ch)
        self.conv2 = _conv_bn_relu(out_ch, out_ch)
        self.out_channels = out_ch
        self.time_proj = nn.Linear(time_dim, out_ch) if time_dim else None

    def forward(self, x, emb=None):
        x = self.conv1(x)
        if self.time_proj is not None and emb is not None:
            x = x + self.time_proj(emb)[:, :, None, None]
        return self.conv2(x)


class _DecoderBlock(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        self.reduce = _conv_bn_relu(in_ch, skip_ch)
        self.conv1 = _conv_bn_relu(2 * skip_ch, skip_ch)
        self.conv2 = _conv_bn_relu(skip_ch, skip_ch)

    def forward(self, x, skip):
        x = self.reduce(self.up(x))
        x = torch.cat([x, skip], dim=1)
        return self.conv2(self.conv1(x))


class UNetGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg or GeneratorConfig()
        filters = self.cfg.encoder_filters
        self.time_embedding = (
            _TimestepEmbedding(self.cfg.time_dim) if self.cfg.time_dim else None
        )
        self.encoder_blocks = nn.ModuleList()
        in_ch = self.cfg.in_channels
        for out_ch in filters:
            self.encoder_blocks.append(_EncoderBlock(in_ch, out_ch, self.cfg.time_dim))
            in_ch = out_ch
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _EncoderBlock(
            filters[-1], self.cfg.bottleneck_filters, self.cfg.time_dim
        )
        self.decoder_blocks = nn.ModuleList()
        in_ch = self.cfg.bottleneck_filters
        for skip_ch in reversed(filters):
            self.decoder_blocks.append(_DecoderBlock(in_ch, skip_ch))
            in_ch = skip_ch
        self.head = nn.Conv2d(filters[0], self.cfg.out_channels, 1)
        self.last_bottleneck_hw: tuple[int, int] | None = None

    def forward(self, x: torch.Tensor, t: torch.Tensor | None = None) -> torch.Tensor:
        h, w = x.shape[-2:]
        factor = self.cfg.downsample_factor
        if h % factor or w % factor:
            raise DomainError(
                f"spatial size {h}x{w} not divisible by {factor}; pad upstream"
            )
        emb = None
        if self.time_embedding is not None:
            if t is None:
                raise DomainError("this generator is time-conditioned; pass t")
            emb = self.time_embedding(torch.as_tensor(t, device=x.device).reshape(-1))
        skips = []
        for block in self.encoder_blocks:
            x = block(x, emb)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x, emb)
        self.last_bottleneck_hw = tuple(x.shape[-2:])
        for block, skip in zip(self.decoder_blocks, reversed(skips)):
            x = block(x, skip)
        return self.head(x)
