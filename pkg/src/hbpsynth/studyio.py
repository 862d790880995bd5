"""On-disk study layout: one directory per patient with NIfTI phase files,
the liver mask, and a JSON metadata sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DomainError
from .volume import PHASE_NAMES, StudyRecord, Volume3D, load_volume, save_volume

SIDECAR = "study.json"


def save_study(study: StudyRecord, root) -> Path:
    out = Path(root) / study.patient_id
    out.mkdir(parents=True, exist_ok=True)
    for name, vol in study.phases.items():
        save_volume(vol.with_data(vol.data.astype(np.float32)), out / f"{name}.nii.gz")
    mask = study.liver_mask
    save_volume(mask.with_data(mask.data.astype(np.uint8)), out / "liver_mask.nii.gz")
    sidecar = {
        "patient_id": study.patient_id,
        "metadata": study.metadata,
        "ces": study.ces,
        "cohort": study.cohort,
    }
    (out / SIDECAR).write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")
    return out


def load_study(path) -> StudyRecord:
    path = Path(path)
    sidecar_path = path / SIDECAR
    if not sidecar_path.exists():
        raise DomainError(f"{path} has no {SIDECAR}")
    sidecar = json.loads(sidecar_path.read_text())
    phases = {}
    for name in PHASE_NAMES:
        f = path / f"{name}.nii.gz"
        if f.exists():
            phases[name] = load_volume(f)
    mask = load_volume(path / "liver_mask.nii.gz")
    return StudyRecord(
        patient_id=sidecar["patient_id"],
        phases=phases,
        liver_mask=mask,
        metadata=sidecar.get("metadata", {}),
        ces=sidecar.get("ces"),
        cohort=sidecar.get("cohort"),
    )


def load_cohort(root) -> list[StudyRecord]:
    root = Path(root)
    if not root.exists():
        raise DomainError(f"no such data directory: {root}")
    studies = []
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / SIDECAR).exists():
            studies.append(load_study(child))
    if not studies:
        raise DomainError(f"no studies found under {root}")
    return studies
