"""Forward/reverse diffusion process over image slices.

The schedule is linear in the forward variances with sigma_t = sqrt(beta_t).
Timestep indices are 1-based (t in 1..T); alpha_bar(0) == 1 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import DomainError, GridMismatchError


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray  # betas[t-1] is the variance at step t

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise DomainError("betas must be a non-empty 1D sequence")
        if not (0.0 < betas[0] <= betas[-1] < 1.0):
            raise DomainError("need 0 < beta_1 <= beta_T < 1")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        if not np.all(np.diff(alpha_bars) < 0):
            raise DomainError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "_alphas", alphas)
        object.__setattr__(self, "_alpha_bars", alpha_bars)

    @classmethod
    def linear(cls, steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02):
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def steps(self) -> int:
        return len(self.betas)

    def beta(self, t) -> np.ndarray | float:
        return self.betas[np.asarray(t) - 1]

    def alpha(self, t):
        return self._alphas[np.asarray(t) - 1]

    def alpha_bar(self, t):
        t = np.asarray(t)
        out = np.where(t == 0, 1.0, self._alpha_bars[np.maximum(t, 1) - 1])
        return out if out.ndim else float(out)

    def sigma(self, t):
        return np.sqrt(self.beta(t))

    def _coeff(self, value, like: torch.Tensor) -> torch.Tensor:
        coeff = torch.as_tensor(value, dtype=like.dtype, device=like.device)
        if coeff.ndim == 0:
            return coeff
        return coeff.reshape(-1, *([1] * (like.ndim - 1)))


def _check_t(t, steps: int):
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > steps):
        raise DomainError(f"t={t} outside 1..{steps}")


def ddpm_forward_sample(
    x0: torch.Tensor, t, eps: torch.Tensor, sched: DiffusionSchedule
) -> torch.Tensor:
    """Noise the clean image directly to step t:
    sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    if x0.shape != eps.shape:
        raise GridMismatchError(f"x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    _check_t(t, sched.steps)
    abar = sched.alpha_bar(t)
    a = sched._coeff(np.sqrt(abar), x0)
    b = sched._coeff(np.sqrt(1.0 - abar), x0)
    return a * x0 + b * eps


def ddpm_condition_stack(x_t: torch.Tensor, conditions) -> torch.Tensor:
    """Channel stack [noisy target, condition_1, ..., condition_M]."""
    tensors = [x_t, *conditions]
    spatial = {tuple(t.shape[-2:]) for t in tensors}
    if len(spatial) != 1:
        raise GridMismatchError(f"condition shapes differ: {sorted(spatial)}")
    return torch.cat(tensors, dim=-3)


def ddpm_reverse_step(
    x_t: torch.Tensor,
    t: int,
    eps_pred: torch.Tensor,
    sched: DiffusionSchedule,
    z: torch.Tensor | None = None,
) -> torch.Tensor:
    """One denoising step from x_t to x_{t-1}; the stochastic term is forced
    to zero at t = 1."""
    if x_t.shape != eps_pred.shape:
        raise GridMismatchError("x_t and eps_pred shapes differ")
    _check_t(t, sched.steps)
    t = int(t)
    alpha = float(sched.alpha(t))
    abar = float(sched.alpha_bar(t))
    mean = (x_t - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps_pred) / np.sqrt(alpha)
    if t == 1 or z is None:
        return mean
    return mean + float(sched.sigma(t)) * z
