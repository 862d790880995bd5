"""Full-reference image quality metrics and cohort aggregation.

Pixel-wise metrics (MAE, MSE, PSNR) work on whole volumes; the windowed
similarity metrics (SSIM, HaarPSI) and the learned-feature perceptual
distance are computed per axial slice and averaged, matching the slice-wise
synthesis pipeline. Additional full-reference metrics (e.g. pretrained VSI /
DISTS / LPIPS replicas) can be plugged in through `register_metric` and flow
through the same report schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy import signal

from .errors import DomainError, GridMismatchError
from .volume import Volume3D

PSNR_INFINITE = math.inf  # sentinel for a zero-error pair


def _check_grids(a: Volume3D, b: Volume3D):
    if a.shape != b.shape:
        raise GridMismatchError(f"volume grids differ: {a.shape} vs {b.shape}")


def mae(a: Volume3D, b: Volume3D) -> float:
    _check_grids(a, b)
    return float(np.abs(a.data.astype(np.float64) - b.data).mean())


def mse(a: Volume3D, b: Volume3D) -> float:
    _check_grids(a, b)
    diff = a.data.astype(np.float64) - b.data
    return float((diff * diff).mean())


def psnr(a: Volume3D, b: Volume3D, peak: float = 1.0) -> float:
    err = mse(a, b)
    if err == 0.0:
        return PSNR_INFINITE
    return float(10.0 * math.log10(peak * peak / err))


# --- SSIM ---------------------------------------------------------------------


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    xs = np.arange(size) - half
    g = np.exp(-(xs**2) / (2 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def _ssim_slice(a: np.ndarray, b: np.ndarray, k1=0.01, k2=0.03, peak=1.0) -> float:
    size = min(11, min(a.shape))
    if size % 2 == 0:
        size -= 1
    window = _gaussian_window(size)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    conv = lambda img: signal.convolve2d(img, window, mode="valid")
    mu_a, mu_b = conv(a), conv(b)
    var_a = conv(a * a) - mu_a**2
    var_b = conv(b * b) - mu_b**2
    cov = conv(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def ssim(a: Volume3D, b: Volume3D) -> float:
    """Windowed structural similarity (11x11 Gaussian, k1=0.01, k2=0.03,
    dynamic range 1), per axial slice, averaged over slices."""
    _check_grids(a, b)
    av, bv = a.data.astype(np.float64), b.data.astype(np.float64)
    return float(np.mean([_ssim_slice(av[:, :, z], bv[:, :, z]) for z in range(av.shape[2])]))


# --- HaarPSI ------------------------------------------------------------------

_HAARPSI_C = 30.0
_HAARPSI_ALPHA = 4.2


def _haar_coefficients(image: np.ndarray, n_scales: int) -> np.ndarray:
    coeffs = np.zeros((n_scales, *image.shape))
    for scale in range(1, n_scales + 1):
        size = 2**scale
        kernel = 2.0 ** (-scale) * np.ones((size, size))
        kernel[: size // 2, :] = -kernel[: size // 2, :]
        coeffs[scale - 1] = signal.convolve2d(image, kernel, mode="same")
    return coeffs


def _haarpsi_slice(a: np.ndarray, b: np.ndarray) -> float:
    # constants are calibrated for the 8-bit intensity range
    a = a * 255.0
    b = b * 255.0
    sims = []
    weights = []
    for orientation in range(2):
        if orientation == 1:
            ca = _haar_coefficients(a.T, 3)
            cb = _haar_coefficients(b.T, 3)
            ca = np.transpose(ca, (0, 2, 1))
            cb = np.transpose(cb, (0, 2, 1))
        else:
            ca = _haar_coefficients(a, 3)
            cb = _haar_coefficients(b, 3)
        weight = np.maximum(np.abs(ca[2]), np.abs(cb[2]))
        mag_a = np.abs(ca[:2])
        mag_b = np.abs(cb[:2])
        local = (
            (2 * mag_a * mag_b + _HAARPSI_C) / (mag_a**2 + mag_b**2 + _HAARPSI_C)
        ).sum(axis=0) / 2.0
        sims.append(local)
        weights.append(weight)
    sims = np.stack(sims)
    weights = np.stack(weights)
    sigm = 1.0 / (1.0 + np.exp(-_HAARPSI_ALPHA * sims))
    pooled = (sigm * weights).sum() / weights.sum()
    return float((np.log(pooled / (1.0 - pooled)) / _HAARPSI_ALPHA) ** 2)


def haarpsi(a: Volume3D, b: Volume3D) -> float:
    """Haar-wavelet similarity: scales 1-2 local similarity, scale-3
    weighting, logistic pooling with C=30 and alpha=4.2; slice-averaged."""
    _check_grids(a, b)
    av, bv = a.data.astype(np.float64), b.data.astype(np.float64)
    return float(
        np.mean([_haarpsi_slice(av[:, :, z], bv[:, :, z]) for z in range(av.shape[2])])
    )


# --- learned-feature perceptual distance ---------------------------------------


def perceptual_distance(a: Volume3D, b: Volume3D, extractor, blocks=(1, 2, 3, 4, 5)) -> float:
    """Unit-normalized per-layer feature differences, channel-averaged and
    layer-summed, per slice; deterministic for a fixed extractor."""
    _check_grids(a, b)
    av = torch.from_numpy(a.data.astype(np.float32))
    bv = torch.from_numpy(b.data.astype(np.float32))
    dists = []
    eps = 1e-10
    with torch.no_grad():
        for z in range(av.shape[2]):
            xa = av[None, None, :, :, z]
            xb = bv[None, None, :, :, z]
            fa = extractor.features(xa, blocks)
            fb = extractor.features(xb, blocks)
            total = 0.0
            for j in blocks:
                na = fa[j] / (fa[j].pow(2).sum(dim=1, keepdim=True).sqrt() + eps)
                nb = fb[j] / (fb[j].pow(2).sum(dim=1, keepdim=True).sqrt() + eps)
                total += float((na - nb).pow(2).mean())
            dists.append(total)
    return float(np.mean(dists))


# --- cohort reports -------------------------------------------------------------

# (function, direction, (loc_exp, spread_exp)) per metric; exponents record
# the table display scaling for mu/M and sigma/IQR respectively
_BUILTIN_METRICS: dict[str, tuple] = {}


def register_metric(name: str, fn, direction: str, exponents=(0, 0)):
    if direction not in ("higher-better", "lower-better"):
        raise DomainError(f"bad direction {direction!r}")
    _BUILTIN_METRICS[name] = (fn, direction, tuple(exponents))


register_metric("MAE", mae, "lower-better", (-3, -3))
register_metric("MSE", mse, "lower-better", (-3, -3))
register_metric("SSIM", ssim, "higher-better", (0, -2))
register_metric("PSNR", psnr, "higher-better", (0, 0))
register_metric("HaarPSI", haarpsi, "higher-better", (0, -2))

# slots reserved for pretrained plug-ins; populated only when registered
PLUGIN_SLOTS = ("VSI", "DISTS", "LPIPS", "DreamSim")


@dataclass
class MetricReport:
    metric: str
    direction: str
    values: dict[str, float]  # patient_id -> value
    loc_exp: int = 0
    spread_exp: int = 0

    @property
    def mu(self) -> float:
        return float(np.mean(list(self.values.values())))

    @property
    def sigma(self) -> float:
        return float(np.std(list(self.values.values())))  # population sd

    @property
    def median(self) -> float:
        return float(np.median(list(self.values.values())))

    @property
    def iqr(self) -> float:
        q25, q75 = np.percentile(list(self.values.values()), [25, 75])
        return float(q75 - q25)

    def __post_init__(self):
        if not self.values:
            raise DomainError("a metric report needs at least one patient")


def evaluate_pair(synthetic: Volume3D, reference: Volume3D, extractor=None) -> dict[str, float]:
    out = {}
    for name, (fn, _, _) in _BUILTIN_METRICS.items():
        out[name] = fn(synthetic, reference)
    if extractor is not None:
        out["PerceptualDistance"] = perceptual_distance(synthetic, reference, extractor)
    return out


def evaluate_cohort(
    pairs: list[tuple[str, Volume3D, Volume3D]], extractor=None
) -> list[MetricReport]:
    """Per-patient metrics over full volumes, aggregated across the cohort.

    `pairs` holds (patient_id, synthetic, reference). Failures are annotated
    with the offending patient id.
    """
    if not pairs:
        raise DomainError("empty cohort")
    per_metric: dict[str, dict[str, float]] = {}
    for patient_id, synthetic, reference in pairs:
        try:
            values = evaluate_pair(synthetic, reference, extractor)
        except DomainError as exc:
            raise DomainError(f"patient {patient_id}: {exc}") from exc
        for name, value in values.items():
            per_metric.setdefault(name, {})[patient_id] = value
    reports = []
    directions = {
        name: spec[1] for name, spec in _BUILTIN_METRICS.items()
    }
    directions["PerceptualDistance"] = "lower-better"
    exponents = {name: spec[2] for name, spec in _BUILTIN_METRICS.items()}
    exponents["PerceptualDistance"] = (0, -2)
    for name, values in per_metric.items():
        loc_exp, spread_exp = exponents.get(name, (0, 0))
        reports.append(
            MetricReport(
                metric=name,
                direction=directions.get(name, "lower-better"),
                values=values,
                loc_exp=loc_exp,
                spread_exp=spread_exp,
            )
        )
    return reports
