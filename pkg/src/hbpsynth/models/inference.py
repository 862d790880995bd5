"""Slice-wise volume synthesis along the axial (third) dimension."""

from __future__ import annotations

import numpy as np
import torch

from ..errors import DomainError
from ..slices import study_slice_stack, undo_pad_or_crop
from ..volume import StudyRecord, Volume3D
from .checkpoint import TrainedModel
from .diffusion import ddpm_condition_stack, ddpm_reverse_step


def infer_volume(
    trained: TrainedModel, study: StudyRecord, sampling_seed: int = 0
) -> Volume3D:
    """Synthesize the HBP volume from the study's input phases.

    Inference uses the training-time channel stacking per axial slice and
    clamps the output to [0, 1]. Diffusion models run the full reverse chain
    per slice with a per-slice generator derived from `sampling_seed`, so the
    output is bit-reproducible; the seed is recorded on the trained model's
    meta dict for provenance.
    """
    if not study.aligned():
        raise DomainError(f"study {study.patient_id} phases are not grid-aligned")
    reference = study.phase("transitional")
    nx, ny, nz = reference.shape
    net = trained.net
    net.eval()
    out = np.zeros((nx, ny, nz), dtype=np.float64)
    with torch.no_grad():
        for z in range(nz):
            stack, _ = study_slice_stack(study, z, trained.resolution)
            x = torch.from_numpy(stack)[None]
            if trained.kind == "ddpm":
                pred = _ddpm_sample_slice(trained, x, sampling_seed + z)
            else:
                pred = net(x)
            slice2d = pred[0, 0].numpy().astype(np.float64)
            out[:, :, z] = undo_pad_or_crop(slice2d, (nx, ny))
    trained.meta["sampling_seed"] = sampling_seed
    return reference.with_data(np.clip(out, 0.0, 1.0))


def _ddpm_sample_slice(
    trained: TrainedModel, conditions: torch.Tensor, seed: int
) -> torch.Tensor:
    sched = trained.schedule
    gen = torch.Generator().manual_seed(seed)
    shape = (conditions.shape[0], 1, *conditions.shape[-2:])
    x_t = torch.randn(shape, generator=gen, dtype=conditions.dtype)
    for t in range(sched.steps, 0, -1):
        stacked = ddpm_condition_stack(x_t, [conditions[:, k : k + 1] for k in range(conditions.shape[1])])
        eps_pred = trained.net(stacked, torch.full((shape[0],), t))
        z = (
            torch.randn(shape, generator=gen, dtype=conditions.dtype)
            if t > 1
            else None
        )
        x_t = ddpm_reverse_step(x_t, t, eps_pred, sched, z)
    return x_t
