"""Frozen perceptual feature extractor.

Five convolutional blocks with VGG-style channel widths provide the low /
mid / high feature taps used by the perceptual losses. Weights default to a
fixed random initialization under a recorded seed so the repository works
fully offline; a pretrained state-dict file can be supplied instead and
changes metric values but no contracts. Parameters are always frozen.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
from torch import nn

from ..errors import DomainError

BLOCK_SETS = {
    "low": (1, 2, 3),
    "mid": (2, 3, 4),
    "high": (3, 4, 5),
}

_CHANNELS = (64, 128, 256, 512, 512)


@dataclass(frozen=True)
class PerceptualExtractorConfig:
    in_channels: int = 1
    channels: tuple[int, ...] = _CHANNELS
    weights_source: str = "fixed-random"  # or "pretrained-file"
    seed: int = 1234
    weights_path: str | None = None

    def __post_init__(self):
        if len(self.channels) != 5:
            raise DomainError("the extractor is a five-block hierarchy")
        if self.weights_source not in ("fixed-random", "pretrained-file"):
            raise DomainError(f"unknown weights_source {self.weights_source!r}")
        if self.weights_source == "pretrained-file" and not self.weights_path:
            raise DomainError("pretrained-file source needs weights_path")


class FeatureExtractor(nn.Module):
    def __init__(self, cfg: PerceptualExtractorConfig | None = None):
        super().__init__()
        self.cfg = cfg or PerceptualExtractorConfig()
        blocks = []
        in_ch = self.cfg.in_channels
        for out_ch in self.cfg.channels:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, out_ch, 3, padding=1),
                    nn.ReLU(inplace=True),
                    nn.Conv2d(out_ch, out_ch, 3, padding=1),
                    nn.ReLU(inplace=True),
                )
            )
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(2)
        if self.cfg.weights_source == "fixed-random":
            self._init_random(self.cfg.seed)
        else:
            state = torch.load(self.cfg.weights_path, map_location="cpu")
            self.load_state_dict(state)
        self.requires_grad_(False)
        self.eval()

    def _init_random(self, seed: int):
        # Kaiming-scaled draws through one seeded generator, independent of
        # torch's global RNG state.
        gen = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                with torch.no_grad():
                    fan_in = module.weight[0].numel()
                    std = (2.0 / fan_in) ** 0.5
                    module.weight.copy_(
                        torch.randn(module.weight.shape, generator=gen) * std
                    )
                    module.bias.zero_()

    def train(self, mode: bool = True):
        return super().train(False)  # permanently frozen in eval mode

    def weights_hash(self) -> str:
        digest = hashlib.sha256()
        for name, param in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(param.detach().cpu().numpy().tobytes())
        return digest.hexdigest()

    def features(self, x: torch.Tensor, blocks) -> dict[int, torch.Tensor]:
        """Per-block activations (tap before pooling) for 1-indexed blocks."""
        blocks = set(blocks)
        bad = blocks - {1, 2, 3, 4, 5}
        if bad:
            raise DomainError(f"block indices out of range: {sorted(bad)}")
        out: dict[int, torch.Tensor] = {}
        for j, block in enumerate(self.blocks, start=1):
            x = block(x)
            if j in blocks:
                out[j] = x
            if j == max(blocks):
                break
            if min(x.shape[-2:]) >= 2:  # tiny inputs stop downsampling
                x = self.pool(x)
        return out
