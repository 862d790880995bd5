"""Self-describing checkpoint container for all model families."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from ..errors import DomainError
from .diffusion import DiffusionSchedule
from .unet import GeneratorConfig, UNetGenerator

FORMAT_TAG = "hbpsynth-checkpoint"
FORMAT_VERSION = 1

MODEL_KINDS = ("unet_mse", "unet_low", "unet_mid", "unet_high", "pgan", "ddpm")


@dataclass
class TrainedModel:
    """A generator ready for slice-wise inference."""

    kind: str
    net: UNetGenerator
    resolution: int
    schedule: DiffusionSchedule | None = None  # ddpm only
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DomainError(f"unknown model kind {self.kind!r}")
        if self.kind == "ddpm" and self.schedule is None:
            raise DomainError("ddpm models need a diffusion schedule")
        self.net.eval()


def save_checkpoint(
    path,
    trained: TrainedModel,
    extractor_seed: int | None = None,
    extractor_hash: str | None = None,
    discriminator_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    payload = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "kind": trained.kind,
        "resolution": trained.resolution,
        "generator_config": trained.net.cfg.__dict__,
        "generator_state": trained.net.state_dict(),
        "schedule_betas": None
        if trained.schedule is None
        else trained.schedule.betas.tolist(),
        "extractor_seed": extractor_seed,
        "extractor_hash": extractor_hash,
        "discriminator_state": discriminator_state,
        "meta": {**trained.meta, **(extra or {})},
    }
    torch.save(payload, Path(path))


def load_checkpoint(path) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise DomainError(f"no such checkpoint: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise DomainError(f"{path} is not a model checkpoint")
    if payload.get("version") != FORMAT_VERSION:
        raise DomainError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = GeneratorConfig(**payload["generator_config"])
    net = UNetGenerator(cfg)
    net.load_state_dict(payload["generator_state"])
    schedule = None
    if payload["schedule_betas"] is not None:
        schedule = DiffusionSchedule(payload["schedule_betas"])
    meta = dict(payload.get("meta") or {})
    meta.setdefault("extractor_seed", payload.get("extractor_seed"))
    meta.setdefault("extractor_hash", payload.get("extractor_hash"))
    return TrainedModel(
        kind=payload["kind"],
        net=net,
        resolution=payload["resolution"],
        schedule=schedule,
        meta=meta,
    )
