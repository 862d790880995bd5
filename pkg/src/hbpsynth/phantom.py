"""Deterministic synthetic multi-phase liver DCE-MRI studies.

The phantom stands in for a clinical dataset: an ellipsoidal liver inside an
ellipsoidal body, branching cylindrical vessels, spherical lesions, a
multiplicative low-order bias field, additive Gaussian noise, and an optional
rigid misregistration of the input phases. Everything is a pure function of
PhantomParams, so identical params give bit-identical studies.

Contrast model: liver parenchyma brightens with the uptake parameter u,
partially at the transitional phase and fully at HBP, while vessels stay
dark, so vessel-to-parenchyma contrast (and hence the liver gradient content)
grows monotonically with u.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DomainError
from .volume import Volume3D, StudyRecord

# base tissue intensities (arbitrary units, roughly [0, 1])
_TISSUE = 0.30
_TISSUE_UPTAKE = 0.03
_LIVER_BASE = 0.35
_LIVER_TOP = 0.95
_VESSEL_BASE = 0.30
_FAT_RIM = 0.92  # subcutaneous fat stays bright in every phase
_TRANSITIONAL_FRACTION = 0.18  # share of the full uptake visible at transitional
_VESSEL_RETENTION = 0.0  # vessels do not retain the agent

LESION_KINDS = ("hypointense", "hyperintense-with-scar", "cyst")


@dataclass(frozen=True)
class LesionSpec:
    kind: str
    center: tuple[int, int, int]  # voxel index
    radius_mm: float
    intensity_offset: float

    def __post_init__(self):
        if self.kind not in LESION_KINDS:
            raise DomainError(f"unknown lesion kind {self.kind!r}")
        if self.radius_mm <= 0:
            raise DomainError("lesion radius must be positive")


@dataclass(frozen=True)
class PhantomParams:
    seed: int
    shape: tuple[int, int, int] = (48, 48, 24)
    spacing: tuple[float, float, float] = (1.0, 1.0, 2.0)
    uptake: float = 0.6
    lesions: tuple[LesionSpec, ...] = ()
    vessel_density: float = 1.0
    noise_sigma: float = 0.0
    bias_amplitude: float = 0.0
    misregistration_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)  # mm

    def __post_init__(self):
        if min(self.shape) < 8:
            raise DomainError(f"shape too small for a phantom: {self.shape}")
        if not 0.0 <= self.uptake <= 1.0:
            raise DomainError("uptake must lie in [0, 1]")
        if self.vessel_density < 0 or self.noise_sigma < 0 or self.bias_amplitude < 0:
            raise DomainError("density/noise/bias parameters must be >= 0")


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


class _Geometry:
    """Per-study deterministic geometry in physical (mm) coordinates."""

    def __init__(self, params: PhantomParams):
        self.params = params
        nx, ny, nz = params.shape
        sx, sy, sz = params.spacing
        self.extent = np.array([nx * sx, ny * sy, nz * sz])
        ii, jj, kk = np.meshgrid(
            np.arange(nx) * sx, np.arange(ny) * sy, np.arange(nz) * sz, indexing="ij"
        )
        self.pts = np.stack([ii, jj, kk], axis=-1)

        self.body_center = self.extent * np.array([0.50, 0.52, 0.50])
        self.body_axes = self.extent * np.array([0.42, 0.38, 0.46])
        self.liver_center = self.extent * np.array([0.40, 0.44, 0.50])
        self.liver_axes = self.extent * np.array([0.24, 0.19, 0.32])
        self.edge_mm = 1.0 * min(params.spacing)

        self.body_w = self._ellipsoid_weight(self.body_center, self.body_axes)
        body_r = self._ellipsoid_r(self.body_center, self.body_axes)
        # thin bright shell just inside the body boundary; constant across
        # phases so per-volume normalization keeps one gauge for all phases
        self.rim_w = self.body_w * _smoothstep(
            (body_r - 0.86) * min(self.body_axes) / self.edge_mm
        )
        self.liver_r = self._ellipsoid_r(self.liver_center, self.liver_axes)
        self.liver_w = _smoothstep((1.0 - self.liver_r) * min(self.liver_axes) / self.edge_mm)
        self.liver_mask = (self.liver_r <= 1.0).astype(np.uint8)

        rng = np.random.default_rng([params.seed, 0xB10])
        self.vessel_w = self._vessels(rng)

    def _ellipsoid_r(self, center, axes):
        d = (self.pts - center) / axes
        return np.sqrt((d * d).sum(axis=-1))

    def _ellipsoid_weight(self, center, axes):
        r = self._ellipsoid_r(center, axes)
        return _smoothstep((1.0 - r) * min(axes) / self.edge_mm)

    def _vessels(self, rng) -> np.ndarray:
        """Union of branching cylinder segments, as a smooth [0,1] weight."""
        n_roots = int(round(11 * self.params.vessel_density))
        w = np.zeros(self.params.shape)
        if n_roots == 0:
            return w
        segs = []
        for _ in range(n_roots):
            u = rng.uniform(-0.45, 0.45, size=3)
            start = self.liver_center + u * self.liver_axes
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            length = 0.9 * float(min(self.liver_axes))
            radius = rng.uniform(1.3, 2.1) * min(self.params.spacing)
            segs.append((start, start + direction * length, radius))
            # two children from the segment midpoint
            for _ in range(2):
                cdir = direction + 0.9 * rng.normal(size=3)
                cdir /= np.linalg.norm(cdir)
                mid = start + direction * (0.5 * length)
                segs.append((mid, mid + cdir * (0.55 * length), 0.7 * radius))
        flat = self.pts.reshape(-1, 3)
        dist = np.full(flat.shape[0], np.inf)
        for a, b, radius in segs:
            ab = b - a
            t = np.clip((flat - a) @ ab / (ab @ ab), 0.0, 1.0)
            d = np.linalg.norm(flat - (a + t[:, None] * ab), axis=1) - radius
            dist = np.minimum(dist, d)
        w = _smoothstep(-dist.reshape(self.params.shape) / self.edge_mm + 1.0)
        # vessels exist only inside the liver
        return w * (self.liver_r <= 0.98)

    def lesion_weight(self, lesion: LesionSpec, scale: float = 1.0) -> np.ndarray:
        center = np.asarray(lesion.center) * np.asarray(self.params.spacing)
        d = np.linalg.norm(self.pts - center, axis=-1)
        return _smoothstep((lesion.radius_mm * scale - d) / self.edge_mm + 1.0) * (
            d <= lesion.radius_mm * scale + self.edge_mm
        )


def _blend(img: np.ndarray, value, weight: np.ndarray) -> np.ndarray:
    return img * (1.0 - weight) + value * weight


def _phase_image(geom: _Geometry, params: PhantomParams, stage: float) -> np.ndarray:
    """Render one phase; stage = fraction of full uptake reached (0..1)."""
    u = params.uptake
    tissue = _TISSUE + _TISSUE_UPTAKE * stage * u
    liver = _LIVER_BASE + stage * u * (_LIVER_TOP - _LIVER_BASE)
    vessel = _VESSEL_BASE + _VESSEL_RETENTION * stage * u * (_LIVER_TOP - _LIVER_BASE)

    img = geom.body_w * tissue
    img = _blend(img, _FAT_RIM, geom.rim_w)
    img = _blend(img, liver, geom.liver_w)
    img = _blend(img, vessel, geom.vessel_w)
    for lesion in params.lesions:
        if lesion.kind == "cyst":
            img = _blend(img, 0.06, geom.lesion_weight(lesion))
        elif lesion.kind == "hypointense":
            # retention factor keeps the lesion conspicuous as the liver brightens
            val = liver + lesion.intensity_offset * (1.0 + 0.8 * stage * u)
            img = _blend(img, max(val, 0.02), geom.lesion_weight(lesion))
        else:  # hyperintense-with-scar
            val = liver + abs(lesion.intensity_offset) * (0.6 + 0.4 * stage * u)
            img = _blend(img, val, geom.lesion_weight(lesion))
            scar = liver - abs(lesion.intensity_offset) * (0.8 + 0.5 * stage * u)
            img = _blend(img, max(scar, 0.02), geom.lesion_weight(lesion, scale=0.35))
    return img


def _bias_field(params: PhantomParams, rng) -> np.ndarray:
    """Multiplicative exp(degree-2 polynomial) field, mean ~1."""
    nx, ny, nz = params.shape
    xs = np.linspace(-1, 1, nx)
    ys = np.linspace(-1, 1, ny)
    zs = np.linspace(-1, 1, nz)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    terms = [X, Y, Z, X * Y, X * Z, Y * Z, X * X, Y * Y, Z * Z]
    coefs = rng.uniform(-1.0, 1.0, size=len(terms)) * params.bias_amplitude
    log_field = sum(c * t for c, t in zip(coefs, terms))
    return np.exp(log_field - log_field.mean())


def _shift_mm(data: np.ndarray, shift_mm, spacing) -> np.ndarray:
    shift_vox = [m / s for m, s in zip(shift_mm, spacing)]
    if all(v == 0 for v in shift_vox):
        return data
    return ndimage.shift(data, shift_vox, order=1, mode="nearest")


def generate_study(params: PhantomParams, patient_id: str | None = None) -> StudyRecord:
    """Render one three-phase study with exact liver mask and metadata."""
    geom = _Geometry(params)
    for lesion in params.lesions:
        center_mm = np.asarray(lesion.center) * np.asarray(params.spacing)
        r = np.linalg.norm((center_mm - geom.liver_center) / geom.liver_axes)
        if r > 0.9:
            raise DomainError(
                f"lesion at {lesion.center} lies outside the liver (r={r:.2f})"
            )

    stages = {"precontrast": 0.0, "transitional": _TRANSITIONAL_FRACTION, "hbp": 1.0}
    rng = np.random.default_rng([params.seed, 0x1A6E])
    bias = _bias_field(params, rng) if params.bias_amplitude > 0 else None

    affine = np.diag([-params.spacing[0], -params.spacing[1], -params.spacing[2], 1.0])
    affine[3, 3] = 1.0

    phases = {}
    for name, stage in stages.items():
        img = _phase_image(geom, params, stage)
        if bias is not None:
            img = img * bias
        if params.noise_sigma > 0:
            img = img + rng.normal(0.0, params.noise_sigma, size=img.shape)
        if name != "hbp":  # HBP is the registration reference and stays put
            img = _shift_mm(img, params.misregistration_shift, params.spacing)
        phases[name] = Volume3D(np.clip(img, 0.0, None), params.spacing, affine)

    mask = Volume3D(geom.liver_mask, params.spacing, affine)
    meta = {
        "uptake": params.uptake,
        "seed": params.seed,
        "noise_sigma": params.noise_sigma,
        "bias_amplitude": params.bias_amplitude,
        "misregistration_shift": list(params.misregistration_shift),
        "source": "phantom",
    }
    return StudyRecord(
        patient_id=patient_id or f"phantom-{params.seed:05d}",
        phases=phases,
        liver_mask=mask,
        metadata=meta,
    )


_SCANNERS = ("scannerA", "scannerB", "scannerC")


def generate_cohort(
    n: int,
    seed: int,
    u_range: tuple[float, float] = (0.1, 0.9),
    shape: tuple[int, int, int] = (48, 48, 24),
    spacing: tuple[float, float, float] = (1.0, 1.0, 2.0),
    noise_sigma: float = 0.0,
    bias_amplitude: float = 0.0,
    lesions_per_study: tuple[int, int] = (1, 3),
) -> list[StudyRecord]:
    """Generate n studies with uptake ~ U(u_range), deterministic under seed."""
    if n < 1:
        raise DomainError("cohort size must be >= 1")
    lo, hi = u_range
    if hi < lo:
        raise DomainError(f"empty uptake range {u_range}")
    rng = np.random.default_rng([seed, 0xC0])
    studies = []
    for i in range(n):
        u = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        lesions = _random_lesions(rng, shape, spacing, lesions_per_study)
        params = PhantomParams(
            seed=seed * 10_000 + i,
            shape=shape,
            spacing=spacing,
            uptake=u,
            lesions=lesions,
            noise_sigma=noise_sigma,
            bias_amplitude=bias_amplitude,
        )
        study = generate_study(params, patient_id=f"phantom-{seed:04d}-{i:03d}")
        study.metadata["scanner"] = _SCANNERS[int(rng.integers(0, len(_SCANNERS)))]
        studies.append(study)
    return studies


def _random_lesions(rng, shape, spacing, count_range) -> tuple[LesionSpec, ...]:
    lo, hi = count_range
    n = int(rng.integers(lo, hi + 1)) if hi > lo else lo
    # liver geometry mirror of _Geometry, in voxel units
    extent = np.asarray(shape) * np.asarray(spacing)
    center = extent * np.array([0.40, 0.44, 0.50])
    axes = extent * np.array([0.24, 0.19, 0.32])
    lesions = []
    for k in range(n):
        u = rng.uniform(-0.5, 0.5, size=3)
        pos_mm = center + u * axes
        vox = tuple(int(round(p / s)) for p, s in zip(pos_mm, spacing))
        kind = LESION_KINDS[int(rng.integers(0, len(LESION_KINDS)))]
        radius = float(rng.uniform(2.0, max(3.0, 0.35 * float(min(axes)))))
        lesions.append(LesionSpec(kind, vox, radius, -0.22))
    return tuple(lesions)
