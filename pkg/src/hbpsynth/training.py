"""Training loops for the three model families.

One epoch draws one random axial slice per training study (documented desk
convention, making epoch counts comparable across cohort sizes). Validation
runs on a fixed seeded slice sample with no parameter updates; the returned
checkpoint is the epoch with the lowest validation loss. Divergence
(non-finite loss) aborts with the last finite state and a flag.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import DomainError
from .models.checkpoint import MODEL_KINDS, TrainedModel
from .models.diffusion import (
    DiffusionSchedule,
    ddpm_condition_stack,
    ddpm_forward_sample,
)
from .models.discriminator import DiscriminatorConfig, PatchDiscriminator
from .models.extractor import FeatureExtractor, PerceptualExtractorConfig
from .models.losses import (
    ddpm_loss,
    feature_loss,
    pgan_discriminator_loss,
    pgan_generator_loss,
    unet_loss,
)
from .models.unet import GeneratorConfig, UNetGenerator
from .slices import study_slice_stack
from .volume import StudyRecord

_DEFAULT_LR = {
    "unet_mse": 1e-3,
    "unet_low": 1e-3,
    "unet_mid": 1e-3,
    "unet_high": 1e-3,
    "pgan": 2e-4,
    "ddpm": 1e-4,
}
_DEFAULT_LAMBDA = {
    "unet_low": 1e3,
    "unet_mid": 1e3,
    "unet_high": 1e3,
    "pgan": 10.0,
}
_FEATURE_BLOCKS = {
    "unet_low": (1, 2, 3),
    "unet_mid": (2, 3, 4),
    "unet_high": (3, 4, 5),
    "pgan": (4,),
}


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "unet_mse"
    resolution: int = 64
    epochs: int = 50
    lr: float | None = None
    lam: float | None = None
    diffusion_steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    base_filters: int = 16
    extractor_seed: int = 1234
    extractor_channels: tuple[int, ...] = (64, 128, 256, 512, 512)
    val_slices_per_study: int = 2

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise DomainError(f"unknown model kind {self.model_kind!r}")
        if self.resolution % 32 != 0:
            raise DomainError("resolution must be divisible by 32")
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.resolved_lr <= 0:
            raise DomainError("learning rate must be positive")

    @property
    def resolved_lr(self) -> float:
        return self.lr if self.lr is not None else _DEFAULT_LR[self.model_kind]

    @property
    def resolved_lambda(self) -> float:
        if self.lam is not None:
            return self.lam
        return _DEFAULT_LAMBDA.get(self.model_kind, 0.0)

    @property
    def feature_blocks(self) -> tuple[int, ...]:
        return _FEATURE_BLOCKS.get(self.model_kind, ())


def sample_training_slice(
    study: StudyRecord, rng: np.random.Generator, resolution: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random axial slice, stacked (precontrast, transitional) input
    and HBP target, padded/cropped to resolution squared."""
    nz = study.phase("hbp").shape[2]
    if nz < 1:
        raise DomainError("empty volume")
    z = int(rng.integers(0, nz))
    return study_slice_stack(study, z, resolution)


def _val_sample(val_set, cfg: TrainConfig) -> tuple[torch.Tensor, torch.Tensor]:
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    stacks, targets = [], []
    for study in val_set:
        for _ in range(cfg.val_slices_per_study):
            stack, target = sample_training_slice(study, rng, cfg.resolution)
            stacks.append(stack)
            targets.append(target)
    return (
        torch.from_numpy(np.stack(stacks)),
        torch.from_numpy(np.stack(targets)),
    )


class _Trainer:
    """Owns the nets, the optimizers, and the per-kind loss wiring."""

    def __init__(self, cfg: TrainConfig, net: UNetGenerator | None = None):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        time_dim = 64 if cfg.model_kind == "ddpm" else None
        in_channels = 3 if cfg.model_kind == "ddpm" else 2
        self.gen_cfg = GeneratorConfig(
            in_channels=in_channels,
            base_filters=cfg.base_filters,
            time_dim=time_dim,
        )
        self.net = net if net is not None else UNetGenerator(self.gen_cfg)
        self.opt = torch.optim.Adam(self.net.parameters(), lr=cfg.resolved_lr)
        self.extractor = None
        if cfg.feature_blocks:
            self.extractor = FeatureExtractor(
                PerceptualExtractorConfig(
                    seed=cfg.extractor_seed, channels=cfg.extractor_channels
                )
            )
        self.disc = None
        self.disc_opt = None
        if cfg.model_kind == "pgan":
            self.disc = PatchDiscriminator(DiscriminatorConfig(condition_channels=2))
            self.disc_opt = torch.optim.Adam(self.disc.parameters(), lr=cfg.resolved_lr)
        self.schedule = (
            DiffusionSchedule.linear(cfg.diffusion_steps)
            if cfg.model_kind == "ddpm"
            else None
        )
        self.torch_rng = torch.Generator().manual_seed(cfg.seed + 1)

    # -- per-kind steps ------------------------------------------------------

    def train_step(self, x: torch.Tensor, y: torch.Tensor) -> float:
        kind = self.cfg.model_kind
        self.net.train()
        if kind == "pgan":
            return self._pgan_step(x, y)
        self.opt.zero_grad()
        if kind == "ddpm":
            loss = self._ddpm_objective(x, y, self.torch_rng)
        elif kind == "unet_mse":
            loss = (y - self.net(x)).pow(2).mean()
        else:
            loss = unet_loss(
                y,
                self.net(x),
                lam=self.cfg.resolved_lambda,
                blocks=self.cfg.feature_blocks,
                extractor=self.extractor,
            )
        loss.backward()
        self.opt.step()
        return float(loss.detach())

    def _pgan_step(self, x: torch.Tensor, y: torch.Tensor) -> float:
        y_hat = self.net(x)
        # one discriminator step on detached fakes
        self.disc_opt.zero_grad()
        d_loss = pgan_discriminator_loss(
            self.disc(x, y), self.disc(x, y_hat.detach())
        )
        d_loss.backward()
        self.disc_opt.step()
        # one generator step
        self.opt.zero_grad()
        g_loss = pgan_generator_loss(
            self.disc(x, y_hat),
            y,
            y_hat,
            lam=self.cfg.resolved_lambda,
            extractor=self.extractor,
            blocks=self.cfg.feature_blocks,
        )
        g_loss.backward()
        self.opt.step()
        return float(g_loss.detach())

    def _ddpm_objective(self, x: torch.Tensor, y: torch.Tensor, rng) -> torch.Tensor:
        batch = y.shape[0]
        t = torch.randint(1, self.schedule.steps + 1, (batch,), generator=rng)
        eps = torch.randn(y.shape, generator=rng, dtype=y.dtype)
        x_t = ddpm_forward_sample(y, t.numpy(), eps, self.schedule)
        stacked = ddpm_condition_stack(x_t, [x[:, k : k + 1] for k in range(x.shape[1])])
        return ddpm_loss(eps, self.net(stacked, t))

    # -- validation ----------------------------------------------------------

    def validation_loss(self, x: torch.Tensor, y: torch.Tensor) -> dict[str, float]:
        kind = self.cfg.model_kind
        self.net.eval()
        with torch.no_grad():
            if kind == "ddpm":
                rng = torch.Generator().manual_seed(self.cfg.seed + 2)
                loss = self._ddpm_objective(x, y, rng)
                t = torch.full((y.shape[0],), max(1, self.schedule.steps // 4))
                eps = torch.randn(y.shape, generator=torch.Generator().manual_seed(self.cfg.seed + 3), dtype=y.dtype)
                x_t = ddpm_forward_sample(y, t.numpy(), eps, self.schedule)
                stacked = ddpm_condition_stack(
                    x_t, [x[:, k : k + 1] for k in range(x.shape[1])]
                )
                eps_hat = self.net(stacked, t)
                abar = self.schedule.alpha_bar(int(t[0]))
                y_hat = (x_t - np.sqrt(1 - abar) * eps_hat) / np.sqrt(abar)
                y_hat = y_hat.clamp(0, 1)
            elif kind == "pgan":
                y_hat = self.net(x)
                # deterministic reconstruction part; the adversarial term
                # depends on the co-trained discriminator and is not a
                # stable model-selection signal
                loss = self.cfg.resolved_lambda * (y - y_hat).abs().mean() + feature_loss(
                    y, y_hat, self.cfg.feature_blocks, self.extractor
                )
            elif kind == "unet_mse":
                y_hat = self.net(x)
                loss = (y - y_hat).pow(2).mean()
            else:
                y_hat = self.net(x)
                loss = unet_loss(
                    y,
                    y_hat,
                    lam=self.cfg.resolved_lambda,
                    blocks=self.cfg.feature_blocks,
                    extractor=self.extractor,
                )
            mae = (y - y_hat).abs().mean()
            mse = (y - y_hat).pow(2).mean()
        return {
            "val_loss": float(loss),
            "val_mae": float(mae),
            "val_mse": float(mse),
        }

    def as_trained(self) -> TrainedModel:
        return TrainedModel(
            kind=self.cfg.model_kind,
            net=self.net,
            resolution=self.cfg.resolution,
            schedule=self.schedule,
            meta={"seed": self.cfg.seed},
        )


def validate_epoch(model, val_set: list[StudyRecord], cfg: TrainConfig) -> dict[str, float]:
    """Deterministic validation pass over a seeded slice sample.

    `model` is either a TrainedModel or a bare generator net; parameters are
    never mutated. Calling twice on the same state returns identical values.
    """
    if isinstance(model, TrainedModel):
        net = model.net
    elif isinstance(model, UNetGenerator):
        net = model
    else:
        raise DomainError(f"cannot validate object of type {type(model).__name__}")
    trainer = _Trainer(cfg, net=net)
    x, y = _val_sample(val_set, cfg)
    return trainer.validation_loss(x, y)


def train(
    model_kind: str,
    train_set: list[StudyRecord],
    val_set: list[StudyRecord],
    cfg: TrainConfig | None = None,
) -> tuple[TrainedModel, list[dict]]:
    """Optimize one model; returns (best-epoch model, per-epoch history)."""
    if cfg is None:
        cfg = TrainConfig(model_kind=model_kind)
    elif cfg.model_kind != model_kind:
        raise DomainError(
            f"cfg.model_kind={cfg.model_kind!r} does not match {model_kind!r}"
        )
    if not train_set or not val_set:
        raise DomainError("train and validation sets must be non-empty")

    trainer = _Trainer(cfg)
    rng = np.random.default_rng([cfg.seed, 0x77])
    val_x, val_y = _val_sample(val_set, cfg)

    history: list[dict] = []
    best_state = copy.deepcopy(trainer.net.state_dict())
    best_val = np.inf
    best_epoch = -1
    diverged = False

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        slices = [
            sample_training_slice(train_set[i], rng, cfg.resolution) for i in order
        ]
        epoch_losses = []
        for start in range(0, len(slices), cfg.batch_size):
            chunk = slices[start : start + cfg.batch_size]
            x = torch.from_numpy(np.stack([c[0] for c in chunk]))
            y = torch.from_numpy(np.stack([c[1] for c in chunk]))
            epoch_losses.append(trainer.train_step(x, y))
        train_loss = float(np.mean(epoch_losses))
        if not np.isfinite(train_loss):
            diverged = True
            history.append(
                {"epoch": epoch, "train_loss": train_loss, "diverged": True}
            )
            break
        record = {"epoch": epoch, "train_loss": train_loss, "diverged": False}
        record.update(trainer.validation_loss(val_x, val_y))
        history.append(record)
        if record["val_loss"] < best_val:
            best_val = record["val_loss"]
            best_epoch = epoch
            best_state = copy.deepcopy(trainer.net.state_dict())

    trainer.net.load_state_dict(best_state)
    trained = trainer.as_trained()
    trained.meta.update(
        {
            "best_epoch": best_epoch,
            "best_val_loss": float(best_val),
            "diverged": diverged,
            "epochs_run": len(history),
        }
    )
    return trained, history
