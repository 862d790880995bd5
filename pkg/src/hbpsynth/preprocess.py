"""Preprocessing pipeline: bias correction, body cropping, registration to
the HBP reference, in-plane resampling, and intensity normalization
(reorientation is provided by the volume module and runs first).

Bias correction is a log-domain polynomial least-squares fit rather than a
full N4 implementation; the registration stage is a mutual-information
affine optimizer with a pluggable external mode for deformable tools.
"""

from __future__ import annotations

import itertools
import json
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DomainError, GridMismatchError, MissingPhaseError, PipelineStepError
from .volume import (
    Volume3D,
    StudyRecord,
    load_volume,
    normalize_intensity,
    reorient_to_lpi,
    resample_inplane,
    save_volume,
)

REGISTRATION_MODES = ("identity", "affine", "external")


@dataclass(frozen=True)
class PipelineConfig:
    target_inplane_spacing: tuple[float, float] = (0.8398, 0.8398)
    bias_poly_degree: int = 2
    crop_threshold: float = 0.05
    registration: str = "affine"
    external_command: str | None = None
    mi_bins: int = 32
    max_iterations: int = 200  # coordinate-descent sweeps per pyramid level
    pyramid: tuple[int, ...] = (4, 2, 1)

    def __post_init__(self):
        if not 0 <= self.bias_poly_degree <= 4:
            raise DomainError("bias_poly_degree must be in 0..4")
        if not 0.0 < self.crop_threshold < 1.0:
            raise DomainError("crop_threshold must lie in (0, 1)")
        if self.registration not in REGISTRATION_MODES:
            raise DomainError(f"unknown registration mode {self.registration!r}")


def _poly_design(coords: np.ndarray, degree: int) -> np.ndarray:
    """Monomial design matrix x^a y^b z^c, a+b+c <= degree, coords in [-1,1]."""
    cols = []
    for a, b, c in itertools.product(range(degree + 1), repeat=3):
        if a + b + c <= degree:
            cols.append(coords[:, 0] ** a * coords[:, 1] ** b * coords[:, 2] ** c)
    return np.stack(cols, axis=1)


def _normalized_coords(shape) -> np.ndarray:
    axes = [np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(n) for n in shape]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def estimate_bias_field(v: Volume3D, mask: Volume3D, degree: int) -> Volume3D:
    """Least-squares polynomial fit of log-intensity inside the mask,
    exponentiated and gauge-fixed to mean 1 over the mask."""
    if not 0 <= degree <= 4:
        raise DomainError("degree must be in 0..4")
    m = np.asarray(mask.data).ravel() > 0
    if not m.any():
        raise DomainError("bias mask is empty")
    vals = v.data.astype(np.float64).ravel()
    if np.any(vals[m] <= 0):
        raise DomainError("bias estimation requires positive intensities inside the mask")
    coords = _normalized_coords(v.shape)
    design = _poly_design(coords, degree)
    coef, *_ = np.linalg.lstsq(design[m], np.log(vals[m]), rcond=None)
    log_field = design @ coef
    field = np.exp(log_field - log_field.max())  # overflow guard; gauge comes next
    field /= field[m].mean()
    return v.with_data(field.reshape(v.shape))


def correct_bias(v: Volume3D, bias: Volume3D) -> Volume3D:
    if v.shape != bias.shape:
        raise GridMismatchError(f"volume {v.shape} vs field {bias.shape}")
    if np.any(bias.data <= 0):
        raise DomainError("bias field must be strictly positive")
    return v.with_data(v.data / bias.data)


CropBox = tuple[tuple[int, int], tuple[int, int], tuple[int, int]]


def body_crop(v: Volume3D, threshold: float) -> tuple[Volume3D, CropBox]:
    """Trim margins whose max-intensity projections fall below
    threshold * (projection max), independently per axis."""
    if not 0.0 < threshold < 1.0:
        raise DomainError("threshold must lie in (0, 1)")
    box = []
    for axis in range(3):
        others = tuple(a for a in range(3) if a != axis)
        profile = v.data.max(axis=others)
        keep = np.flatnonzero(profile > threshold * profile.max())
        if keep.size == 0:
            raise DomainError("whole volume lies below the crop threshold")
        box.append((int(keep[0]), int(keep[-1]) + 1))
    return apply_crop(v, tuple(box)), tuple(box)


def apply_crop(v: Volume3D, box: CropBox) -> Volume3D:
    (x0, x1), (y0, y1), (z0, z1) = box
    data = v.data[x0:x1, y0:y1, z0:z1]
    affine = v.affine.copy()
    affine[:3, 3] = v.voxel_to_world((x0, y0, z0))
    return Volume3D(data, v.spacing, affine)


# --- affine registration -----------------------------------------------------


@dataclass
class RegistrationResult:
    volume: Volume3D
    transform: np.ndarray  # fixed-world -> moving-world
    converged: bool
    mi: float = 0.0


def _params_to_matrix(theta: np.ndarray, center: np.ndarray) -> np.ndarray:
    """9 params (tx,ty,tz, rx,ry,rz, log-scales) -> world affine about center."""
    t = theta[:3]
    rx, ry, rz = theta[3:6]
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    lin = rot_z @ rot_y @ rot_x @ np.diag(np.exp(theta[6:9]))
    mat = np.eye(4)
    mat[:3, :3] = lin
    mat[:3, 3] = center - lin @ center + t
    return mat


def _resample_onto(moving: Volume3D, fixed: Volume3D, world_map: np.ndarray) -> np.ndarray:
    """Sample `moving` on `fixed`'s grid through the fixed->moving world map."""
    shape = fixed.shape
    idx = np.indices(shape).reshape(3, -1).astype(np.float64)
    hom = np.vstack([idx, np.ones((1, idx.shape[1]))])
    voxel_map = np.linalg.inv(moving.affine) @ world_map @ fixed.affine
    src = (voxel_map @ hom)[:3]
    vals = ndimage.map_coordinates(
        moving.data.astype(np.float64), src, order=1, mode="nearest"
    )
    return vals.reshape(shape)


def _mutual_information(a: np.ndarray, b: np.ndarray, bins: int) -> float:
    joint, _, _ = np.histogram2d(a.ravel(), b.ravel(), bins=bins)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))


def _downscale(v: Volume3D, factor: int) -> Volume3D:
    if factor == 1:
        return v
    shape = tuple(max(2, n // factor) for n in v.shape)
    grids = np.meshgrid(
        *[np.arange(n) * factor for n in shape], indexing="ij"
    )
    # light smoothing before decimation keeps the histogram stable
    data = ndimage.gaussian_filter(v.data.astype(np.float64), sigma=factor / 2.0)
    out = ndimage.map_coordinates(
        data, np.stack([g.ravel() for g in grids]), order=1, mode="nearest"
    ).reshape(shape)
    scale = np.diag([factor, factor, factor, 1.0])
    spacing = tuple(s * factor for s in v.spacing)
    return Volume3D(out, spacing, v.affine @ scale)


def register_to_hbp(
    moving: Volume3D,
    fixed: Volume3D,
    mode: str = "affine",
    cfg: PipelineConfig | None = None,
) -> RegistrationResult:
    """Align `moving` to `fixed` (the HBP reference).

    Affine mode maximizes a 32-bin mutual-information surrogate over
    translation, rotation and scale with coordinate descent on a coarse-to-
    fine pyramid. Identity mode passes the input through; external mode
    shells out to a user-supplied tool honoring the same transform contract.
    """
    cfg = cfg or PipelineConfig()
    if mode not in REGISTRATION_MODES:
        raise DomainError(f"unknown registration mode {mode!r}")
    if mode == "identity":
        return RegistrationResult(moving, np.eye(4), converged=True)
    if mode == "external":
        return _register_external(moving, fixed, cfg)

    theta = np.zeros(9)
    converged = False
    mi = -np.inf
    for factor in cfg.pyramid:
        fix_l = _downscale(fixed, factor)
        mov_l = _downscale(moving, factor)
        center = fix_l.voxel_to_world((np.asarray(fix_l.shape) - 1) / 2.0)
        steps = np.array(
            [2.0 * s for s in fix_l.spacing] + [0.05] * 3 + [0.02] * 3
        )
        fixed_vals = fix_l.data.astype(np.float64)

        def objective(th):
            warped = _resample_onto(mov_l, fix_l, _params_to_matrix(th, center))
            return _mutual_information(fixed_vals, warped, cfg.mi_bins)

        mi = objective(theta)
        converged = False
        for _ in range(cfg.max_iterations):
            improved = False
            for k in range(9):
                for direction in (+1.0, -1.0):
                    trial = theta.copy()
                    trial[k] += direction * steps[k]
                    val = objective(trial)
                    if val > mi + 1e-9:
                        theta, mi = trial, val
                        improved = True
                        break
            if not improved:
                steps *= 0.5
                if steps[0] < 0.05 * min(fix_l.spacing):
                    converged = True
                    break
    transform = _params_to_matrix(
        theta, fixed.voxel_to_world((np.asarray(fixed.shape) - 1) / 2.0)
    )
    warped = _resample_onto(moving, fixed, transform)
    out = Volume3D(warped, fixed.spacing, fixed.affine)
    return RegistrationResult(out, transform, converged=converged, mi=mi)


def _register_external(
    moving: Volume3D, fixed: Volume3D, cfg: PipelineConfig
) -> RegistrationResult:
    if not cfg.external_command:
        raise DomainError("external registration requires external_command")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        save_volume(moving, tmp / "moving.nii.gz")
        save_volume(fixed, tmp / "fixed.nii.gz")
        out_vol = tmp / "registered.nii.gz"
        out_tf = tmp / "transform.json"
        subprocess.run(
            [
                cfg.external_command,
                str(tmp / "moving.nii.gz"),
                str(tmp / "fixed.nii.gz"),
                str(out_vol),
                str(out_tf),
            ],
            check=True,
        )
        vol = load_volume(out_vol)
        transform = np.asarray(json.loads(out_tf.read_text()), dtype=np.float64)
        if transform.shape != (4, 4):
            raise DomainError("external tool returned a non-4x4 transform")
    return RegistrationResult(vol, transform, converged=True)


# --- full pipeline ------------------------------------------------------------


def run_pipeline(study: StudyRecord, cfg: PipelineConfig | None = None) -> StudyRecord:
    """Apply the full preprocessing chain with HBP as the spatial reference.

    Order: reorient, bias correction, body crop (box from HBP, shared by all
    phases), registration of the input phases onto HBP, in-plane resampling,
    and per-volume intensity normalization. The liver mask follows every
    geometric step (nearest-neighbour where interpolation is involved).
    """
    cfg = cfg or PipelineConfig()
    for name in ("precontrast", "transitional", "hbp"):
        if name not in study.phases:
            raise MissingPhaseError(f"study {study.patient_id} lacks phase '{name}'")

    provenance: dict = {
        "bias_degree": cfg.bias_poly_degree,
        "registration_mode": cfg.registration,
        "target_inplane_spacing": list(cfg.target_inplane_spacing),
    }
    phases = dict(study.phases)
    mask = study.liver_mask

    def step(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DomainError as exc:
            raise PipelineStepError(name, exc) from exc

    phases = {k: step("reorient", reorient_to_lpi, v) for k, v in phases.items()}
    mask = step("reorient", reorient_to_lpi, mask)
    mask = mask.with_data((mask.data > 0.5).astype(np.uint8))

    if cfg.bias_poly_degree > 0:
        corrected = {}
        for k, v in phases.items():
            body = v.with_data((v.data > cfg.crop_threshold * v.data.max()).astype(np.uint8))
            fld = step("bias", estimate_bias_field, v, body, cfg.bias_poly_degree)
            corrected[k] = step("bias", correct_bias, v, fld)
        phases = corrected

    _, box = step("crop", body_crop, phases["hbp"], cfg.crop_threshold)
    phases = {k: step("crop", apply_crop, v, box) for k, v in phases.items()}
    mask = step("crop", apply_crop, mask, box)
    provenance["crop_box"] = [list(b) for b in box]

    transforms = {}
    registered = {"hbp": phases["hbp"]}
    for k in ("precontrast", "transitional"):
        res = step("register", register_to_hbp, phases[k], phases["hbp"], cfg.registration, cfg)
        registered[k] = res.volume
        transforms[k] = res.transform.tolist()
        provenance.setdefault("registration_converged", {})[k] = res.converged
    phases = registered
    provenance["transforms"] = transforms

    phases = {
        k: step("resample", resample_inplane, v, cfg.target_inplane_spacing)
        for k, v in phases.items()
    }
    mask = step("resample", resample_inplane, mask, cfg.target_inplane_spacing, order=0)
    mask = mask.with_data((mask.data > 0.5).astype(np.uint8))

    phases = {k: step("normalize", normalize_intensity, v) for k, v in phases.items()}

    metadata = dict(study.metadata)
    metadata["preprocess"] = provenance
    return StudyRecord(
        patient_id=study.patient_id,
        phases=phases,
        liver_mask=mask,
        metadata=metadata,
        ces=study.ces,
        cohort=study.cohort,
    )
