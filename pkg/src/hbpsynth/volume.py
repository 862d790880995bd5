"""Volume data model: 3D grid with spacing and affine, plus the shared
reorientation / resampling / normalization operations and NIfTI I/O.

Conventions
-----------
* World coordinates follow the RAS+ convention (+x right, +y anterior,
  +z superior); the affine maps voxel indices to world millimetres.
* Orientation codes name the patient-space direction each voxel axis points
  to, e.g. "LPI" = axis0 toward Left, axis1 toward Posterior, axis2 toward
  Inferior.
* All operations are pure: they return new volumes and never mutate inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import nifti
from .errors import DomainError, GridMismatchError, MissingPhaseError

PHASE_NAMES = ("precontrast", "transitional", "hbp")

# positive/negative world-axis labels per RAS+ axis
_AXIS_LABELS = (("R", "L"), ("A", "P"), ("S", "I"))
_LABEL_TO_DIR = {
    lab: (ax, sign)
    for ax, pair in enumerate(_AXIS_LABELS)
    for lab, sign in zip(pair, (1, -1))
}


@dataclass(frozen=True)
class Volume3D:
    """A 3D scalar grid with voxel spacing (mm) and a voxel-to-world affine."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    affine: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DomainError(f"data must be 3D with all dims >= 1, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if min(spacing) <= 0:
            raise DomainError(f"spacing must be positive, got {spacing}")
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (4, 4) or abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise DomainError("affine must be an invertible 4x4 matrix")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def orientation(self) -> str:
        return orientation_code(self.affine)

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def with_data(self, data: np.ndarray) -> "Volume3D":
        """Same grid, new values; shapes must agree."""
        data = np.asarray(data)
        if data.shape != self.data.shape:
            raise GridMismatchError(f"shape {data.shape} != {self.data.shape}")
        return replace(self, data=data)

    def voxel_to_world(self, idx) -> np.ndarray:
        idx = np.atleast_2d(np.asarray(idx, dtype=np.float64))
        pts = self.affine[:3, :3] @ idx.T + self.affine[:3, 3:4]
        return pts.T.squeeze()

    def world_to_voxel(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        inv = np.linalg.inv(self.affine)
        idx = inv[:3, :3] @ pts.T + inv[:3, 3:4]
        return idx.T.squeeze()

    def sample_world(self, pts, order: int = 1) -> np.ndarray:
        """Interpolate values at world points (linear by default, edge clamp)."""
        idx = np.atleast_2d(self.world_to_voxel(pts))
        return ndimage.map_coordinates(
            self.data.astype(np.float64), idx.T, order=order, mode="nearest"
        )


def grid_like(v: Volume3D, other: Volume3D) -> bool:
    return v.data.shape == other.data.shape and np.allclose(v.affine, other.affine)


def orientation_code(affine: np.ndarray) -> str:
    """Three-letter anatomical code of the affine's voxel axes."""
    rot = np.asarray(affine, dtype=np.float64)[:3, :3]
    code = []
    used: set[int] = set()
    for j in range(3):
        col = rot[:, j]
        if not np.any(np.abs(col) > 1e-12):
            raise DomainError(f"affine column {j} is degenerate")
        for ax in np.argsort(-np.abs(col)):
            if ax not in used:
                break
        used.add(int(ax))
        pos, neg = _AXIS_LABELS[ax]
        code.append(pos if col[ax] > 0 else neg)
    return "".join(code)


def _code_directions(code: str) -> list[tuple[int, int]]:
    code = code.upper()
    if len(code) != 3 or any(c not in _LABEL_TO_DIR for c in code):
        raise DomainError(f"unrecognized orientation code {code!r}")
    dirs = [_LABEL_TO_DIR[c] for c in code]
    if len({ax for ax, _ in dirs}) != 3:
        raise DomainError(f"orientation code {code!r} repeats a world axis")
    return dirs


def reorient(v: Volume3D, target: str = "LPI") -> Volume3D:
    """Permute/flip voxel axes so the orientation code becomes `target`.

    World coordinates of every voxel are unchanged; only the array layout and
    the affine move.
    """
    current = _code_directions(v.orientation)
    wanted = _code_directions(target)

    data = v.data
    affine = v.affine.copy()
    # flip axes whose world direction disagrees with the target sign
    want_sign = {ax: sign for ax, sign in wanted}
    for j, (ax, sign) in enumerate(current):
        if sign != want_sign[ax]:
            n = data.shape[j]
            data = np.flip(data, axis=j)
            affine[:, 3] += affine[:, j] * (n - 1)
            affine[:, j] *= -1
    # permute axes into the target world-axis order
    cur_axes = [ax for ax, _ in current]
    perm = [cur_axes.index(ax) for ax, _ in wanted]
    data = np.transpose(data, perm)
    new_affine = affine.copy()
    new_affine[:, :3] = affine[:, perm]
    spacing = tuple(v.spacing[p] for p in perm)
    return Volume3D(np.ascontiguousarray(data), spacing, new_affine)


def reorient_to_lpi(v: Volume3D) -> Volume3D:
    return reorient(v, "LPI")


def resample_inplane(
    v: Volume3D, target: tuple[float, float], order: int = 1
) -> Volume3D:
    """Resample the first two (in-plane) axes to `target` spacing in mm.

    The through-plane axis is untouched. Interpolation is linear; the voxel-0
    center stays at the same world point and the field of view is preserved
    to within one voxel.
    """
    tx, ty = (float(t) for t in target)
    if tx <= 0 or ty <= 0:
        raise DomainError(f"target spacing must be positive, got {target}")
    sx, sy, sz = v.spacing
    if tx == sx and ty == sy:
        return v
    nx = max(1, round(v.shape[0] * sx / tx))
    ny = max(1, round(v.shape[1] * sy / ty))
    nz = v.shape[2]
    ii, jj, kk = np.meshgrid(
        np.arange(nx) * (tx / sx),
        np.arange(ny) * (ty / sy),
        np.arange(nz, dtype=np.float64),
        indexing="ij",
    )
    out = ndimage.map_coordinates(
        v.data.astype(np.float64),
        np.stack([ii.ravel(), jj.ravel(), kk.ravel()]),
        order=order,
        mode="nearest",
    ).reshape(nx, ny, nz)
    scale = np.diag([tx / sx, ty / sy, 1.0, 1.0])
    return Volume3D(out, (tx, ty, sz), v.affine @ scale)


def normalize_intensity(v: Volume3D) -> Volume3D:
    """Linearly map values to [0, 1]; a constant volume becomes all zeros."""
    lo = float(v.data.min())
    hi = float(v.data.max())
    if hi == lo:
        return v.with_data(np.zeros_like(v.data, dtype=np.float64))
    return v.with_data((v.data.astype(np.float64) - lo) / (hi - lo))


def load_volume(path, canonical: bool = False) -> Volume3D:
    """Load a NIfTI-1 volume; `canonical=True` reorients to LPI on load."""
    data, spacing, affine = nifti.read(path)
    v = Volume3D(data, spacing, affine)
    return reorient_to_lpi(v) if canonical else v


def save_volume(v: Volume3D, path) -> None:
    nifti.write(path, v.data, v.spacing, v.affine)


@dataclass
class StudyRecord:
    """One patient: phase volumes, liver mask, metadata, and curation state."""

    patient_id: str
    phases: dict[str, Volume3D]
    liver_mask: Volume3D
    metadata: dict = field(default_factory=dict)
    ces: float | None = None
    cohort: str | None = None  # "IoD" | "OoD" once labelled

    def __post_init__(self):
        unknown = set(self.phases) - set(PHASE_NAMES)
        if unknown:
            raise MissingPhaseError(f"unknown phase names: {sorted(unknown)}")
        mask = np.asarray(self.liver_mask.data)
        if not np.isin(mask, (0, 1)).all():
            raise DomainError("liver_mask must be strictly {0,1}-valued")
        if mask.sum() == 0:
            raise DomainError("liver_mask is empty")

    def phase(self, name: str) -> Volume3D:
        if name not in self.phases:
            raise MissingPhaseError(f"study {self.patient_id} lacks phase '{name}'")
        return self.phases[name]

    def aligned(self) -> bool:
        """True when all phases and the mask share shape and spacing."""
        vols = [*self.phases.values(), self.liver_mask]
        first = vols[0]
        return all(
            v.shape == first.shape and np.allclose(v.spacing, first.spacing)
            for v in vols[1:]
        )
