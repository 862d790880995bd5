"""Training objectives for the three model families.

All losses are pure functions of tensors (plus a frozen extractor) and carry
no internal state, so they can be checked against finite differences.
"""

from __future__ import annotations

import torch

from ..errors import DomainError, GridMismatchError


def _check_shapes(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise GridMismatchError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def feature_loss(y: torch.Tensor, y_hat: torch.Tensor, blocks, extractor) -> torch.Tensor:
    """Mean over blocks of the size-normalized squared feature distance."""
    _check_shapes(y, y_hat)
    blocks = tuple(blocks)
    if not blocks:
        return y.new_zeros(())
    feats_y = extractor.features(y, blocks)
    feats_p = extractor.features(y_hat, blocks)
    total = y.new_zeros(())
    for j in blocks:
        diff = feats_y[j] - feats_p[j]
        total = total + diff.pow(2).mean()
    return total / len(blocks)


def unet_loss(
    y: torch.Tensor,
    y_hat: torch.Tensor,
    lam: float = 1e3,
    blocks=(),
    extractor=None,
) -> torch.Tensor:
    """Weighted pixel-wise squared error plus the feature reconstruction term."""
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    _check_shapes(y, y_hat)
    pixel = (y - y_hat).pow(2).mean()
    if extractor is None or not tuple(blocks):
        return lam * pixel
    return lam * pixel + feature_loss(y, y_hat, blocks, extractor)


def pgan_discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator objective (minimization form)."""
    return (d_real - 1.0).pow(2).mean() + d_fake.pow(2).mean()


def pgan_generator_loss(
    d_fake: torch.Tensor,
    y: torch.Tensor,
    y_hat: torch.Tensor,
    lam: float = 10.0,
    extractor=None,
    blocks=(4,),
) -> torch.Tensor:
    """Least-squares adversarial term + weighted L1 + block-4 feature loss."""
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    _check_shapes(y, y_hat)
    adv = (d_fake - 1.0).pow(2).mean()
    l1 = (y - y_hat).abs().mean()
    feat = (
        feature_loss(y, y_hat, blocks, extractor)
        if extractor is not None
        else y.new_zeros(())
    )
    return adv + lam * l1 + feat


def pgan_losses(
    x: torch.Tensor,
    y: torch.Tensor,
    generator,
    discriminator,
    lam: float = 10.0,
    extractor=None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Generator and discriminator objectives for one conditioned batch."""
    y_hat = generator(x)
    d_real = discriminator(x, y)
    d_fake = discriminator(x, y_hat)
    gen = pgan_generator_loss(d_fake, y, y_hat, lam=lam, extractor=extractor)
    disc = pgan_discriminator_loss(d_real, discriminator(x, y_hat.detach()))
    return gen, disc


def ddpm_loss(eps: torch.Tensor, eps_pred: torch.Tensor) -> torch.Tensor:
    """Mean squared noise-prediction error."""
    _check_shapes(eps, eps_pred)
    return (eps - eps_pred).pow(2).mean()
