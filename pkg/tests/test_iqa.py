"""IQA metrics: axioms, closed forms, independent HaarPSI transcription."""

import math

import numpy as np
import pytest

from hbpsynth.errors import DomainError, GridMismatchError
from hbpsynth.iqa import (
    PSNR_INFINITE,
    MetricReport,
    evaluate_cohort,
    haarpsi,
    mae,
    mse,
    perceptual_distance,
    psnr,
    ssim,
)
from hbpsynth.models import FeatureExtractor, PerceptualExtractorConfig
from hbpsynth.volume import Volume3D


def vol(data, spacing=(1.0, 1.0, 1.0)):
    return Volume3D(np.asarray(data, dtype=np.float64), spacing, np.diag([-1.0, -1.0, -1.0, 1.0]))


def rand_vol(shape, seed=0, lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return vol(rng.uniform(lo, hi, shape))


def tiny_extractor():
    return FeatureExtractor(PerceptualExtractorConfig(seed=11, channels=(4, 4, 4, 4, 4)))


# --- independent transcription of the HaarPSI construction -------------------
# Deliberately written from scratch against the published formula (scales 1-2
# similarity, scale-3 weights, C=30, alpha=4.2, logistic pooling), sharing no
# code with the implementation.


def oracle_haarpsi_2d(ref, dist):
    from scipy.signal import convolve2d

    C, alpha = 30.0, 4.2
    ref = ref * 255.0
    dist = dist * 255.0

    def filt(scale):
        k = np.ones((2**scale, 2**scale)) / (2.0**scale)
        k[: 2 ** (scale - 1), :] *= -1.0
        return k

    def decompose(img):
        return [convolve2d(img, filt(s), mode="same") for s in (1, 2, 3)]

    num = 0.0
    den = 0.0
    for transpose in (False, True):
        r = ref.T if transpose else ref
        d = dist.T if transpose else dist
        cr = decompose(r)
        cd = decompose(d)
        if transpose:
            cr = [c.T for c in cr]
            cd = [c.T for c in cd]
        w = np.maximum(np.abs(cr[2]), np.abs(cd[2]))
        s = np.zeros_like(w)
        for j in (0, 1):
            a, b = np.abs(cr[j]), np.abs(cd[j])
            s += (2 * a * b + C) / (a * a + b * b + C)
        s /= 2.0
        num += float((1.0 / (1.0 + np.exp(-alpha * s)) * w).sum())
        den += float(w.sum())
    pooled = num / den
    return (math.log(pooled / (1 - pooled)) / alpha) ** 2


class TestPixelMetrics:
    def test_identical_volumes(self):
        v = rand_vol((6, 6, 3))
        assert mae(v, v) == 0.0
        assert mse(v, v) == 0.0
        assert psnr(v, v) == PSNR_INFINITE

    def test_constant_offset(self):
        v = rand_vol((6, 6, 3), lo=0.2, hi=0.8)
        shifted = vol(v.data + 0.1)
        assert mae(v, shifted) == pytest.approx(0.1, abs=1e-12)
        assert mse(v, shifted) == pytest.approx(0.01, abs=1e-12)

    def test_against_double_loop_oracle(self):
        a = rand_vol((4, 3, 2), seed=1)
        b = rand_vol((4, 3, 2), seed=2)
        acc_abs = 0.0
        acc_sq = 0.0
        n = 0
        for i in range(4):
            for j in range(3):
                for k in range(2):
                    d = a.data[i, j, k] - b.data[i, j, k]
                    acc_abs += abs(d)
                    acc_sq += d * d
                    n += 1
        assert mae(a, b) == pytest.approx(acc_abs / n, abs=1e-12)
        assert mse(a, b) == pytest.approx(acc_sq / n, abs=1e-12)

    def test_psnr_closed_form_and_monotonicity(self):
        base = vol(np.zeros((10, 10, 1)))
        noisy = vol(np.full((10, 10, 1), 0.1))
        assert psnr(base, noisy) == pytest.approx(20.0, abs=1e-9)
        worse = vol(np.full((10, 10, 1), 0.2))
        assert psnr(base, worse) < psnr(base, noisy)

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatchError):
            mae(rand_vol((4, 4, 2)), rand_vol((4, 4, 3)))

    def test_mse_bounded_by_mae_on_unit_range(self):
        a, b = rand_vol((8, 8, 2), 3), rand_vol((8, 8, 2), 4)
        assert mse(a, b) <= mae(a, b)


class TestSSIM:
    def test_self_similarity(self):
        v = rand_vol((16, 16, 3))
        assert ssim(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self):
        a, b = rand_vol((16, 16, 2), 5), rand_vol((16, 16, 2), 6)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_uncorrelated_noise_scores_low(self):
        rng = np.random.default_rng(7)
        a = vol(np.clip(rng.normal(0.5, 0.3, (32, 32, 4)), 0, 1))
        b = vol(np.clip(rng.normal(0.5, 0.3, (32, 32, 4)), 0, 1))
        assert ssim(a, b) < 0.1


class TestHaarPSI:
    def test_self_similarity(self):
        v = rand_vol((16, 16, 2))
        assert haarpsi(v, v) == pytest.approx(1.0, abs=1e-9)

    def test_range(self):
        a, b = rand_vol((16, 16, 2), 8), rand_vol((16, 16, 2), 9)
        value = haarpsi(a, b)
        assert 0.0 < value <= 1.0

    def test_matches_independent_transcription(self):
        rng = np.random.default_rng(10)
        for seed in range(3):
            a2d = rng.uniform(0, 1, (8, 8))
            b2d = rng.uniform(0, 1, (8, 8))
            ours = haarpsi(vol(a2d[:, :, None]), vol(b2d[:, :, None]))
            oracle = oracle_haarpsi_2d(a2d, b2d)
            assert ours == pytest.approx(oracle, abs=1e-8)


class TestPerceptualDistance:
    def test_identical_volumes(self):
        ext = tiny_extractor()
        v = rand_vol((32, 32, 2))
        assert perceptual_distance(v, v, ext) == 0.0

    def test_symmetric(self):
        ext = tiny_extractor()
        a, b = rand_vol((32, 32, 2), 1), rand_vol((32, 32, 2), 2)
        assert perceptual_distance(a, b, ext) == pytest.approx(
            perceptual_distance(b, a, ext), rel=1e-6
        )

    def test_single_voxel_perturbation_is_positive(self):
        ext = tiny_extractor()
        a = rand_vol((32, 32, 1), 3)
        data = a.data.copy()
        data[16, 16, 0] = np.clip(data[16, 16, 0] + 0.5, 0, 1)
        assert perceptual_distance(a, vol(data), ext) > 0.0


class TestCohortReports:
    def test_single_patient_aggregates(self):
        a, b = rand_vol((8, 8, 2), 1), rand_vol((8, 8, 2), 2)
        reports = evaluate_cohort([("p0", a, b)])
        for report in reports:
            assert report.mu == pytest.approx(report.median)
            assert report.sigma == 0.0
            assert report.iqr == 0.0

    def test_quantile_convention_matches_sort_oracle(self):
        values = {f"p{i}": float(v) for i, v in enumerate([1.0, 2.0, 3.0, 4.0])}
        report = MetricReport("MAE", "lower-better", values)
        assert report.median == pytest.approx(2.5)
        # linear interpolation: q25 = 1.75, q75 = 3.25
        assert report.iqr == pytest.approx(1.5)
        assert report.mu == pytest.approx(2.5)
        xs = sorted(values.values())
        assert min(xs) <= report.median <= max(xs)

    def test_perfect_cohort_mae_all_zero(self):
        vols = [rand_vol((8, 8, 2), s) for s in range(3)]
        pairs = [(f"p{i}", v, v) for i, v in enumerate(vols)]
        reports = {r.metric: r for r in evaluate_cohort(pairs)}
        assert all(v == 0.0 for v in reports["MAE"].values.values())
        assert reports["MAE"].mu == 0.0

    def test_failure_annotated_with_patient(self):
        good = rand_vol((8, 8, 2))
        bad = rand_vol((8, 8, 3))
        with pytest.raises(DomainError, match="p1"):
            evaluate_cohort([("p0", good, good), ("p1", good, bad)])

    def test_directions_and_exponents_recorded(self):
        a, b = rand_vol((8, 8, 2), 1), rand_vol((8, 8, 2), 2)
        reports = {r.metric: r for r in evaluate_cohort([("p", a, b)], tiny_extractor())}
        assert reports["MAE"].direction == "lower-better"
        assert reports["SSIM"].direction == "higher-better"
        assert reports["MAE"].loc_exp == -3
        assert reports["SSIM"].spread_exp == -2
        assert "PerceptualDistance" in reports
