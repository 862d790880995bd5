"""Phantom generator: determinism, contrast model, cohort properties."""

import numpy as np
import pytest
from scipy import stats

from hbpsynth.errors import DomainError
from hbpsynth.curation import MetricDescriptor, ces
from hbpsynth.phantom import (
    LesionSpec,
    PhantomParams,
    generate_cohort,
    generate_study,
    _Geometry,
)

MEAN_GRAD = MetricDescriptor("gradient", "Mean")


def liver_mean(study, phase):
    mask = study.liver_mask.data > 0
    return float(study.phases[phase].data[mask].mean())


def cc_peak_shift(a, b):
    """Integer shift of a relative to b at the circular cross-correlation peak."""
    fa = np.fft.fftn(a - a.mean())
    fb = np.fft.fftn(b - b.mean())
    corr = np.fft.ifftn(fa * np.conj(fb)).real
    idx = np.unravel_index(np.argmax(corr), corr.shape)
    return tuple(i if i <= n // 2 else i - n for i, n in zip(idx, corr.shape))


class TestGenerateStudy:
    def test_same_seed_is_bit_identical(self):
        p = PhantomParams(seed=42, uptake=0.5, noise_sigma=0.02, bias_amplitude=0.1)
        a = generate_study(p)
        b = generate_study(p)
        for name in a.phases:
            np.testing.assert_array_equal(a.phases[name].data, b.phases[name].data)
        np.testing.assert_array_equal(a.liver_mask.data, b.liver_mask.data)

    def test_zero_uptake_matches_transitional(self):
        sigma = 0.01
        study = generate_study(PhantomParams(seed=1, uptake=0.0, noise_sigma=sigma))
        assert abs(liver_mean(study, "hbp") - liver_mean(study, "transitional")) <= 2 * sigma
        clean = generate_study(PhantomParams(seed=1, uptake=0.0))
        assert liver_mean(clean, "hbp") == pytest.approx(
            liver_mean(clean, "transitional"), abs=1e-12
        )

    def test_liver_mean_monotone_across_phases(self):
        study = generate_study(PhantomParams(seed=2, uptake=0.7))
        means = [liver_mean(study, p) for p in ("precontrast", "transitional", "hbp")]
        assert means[0] <= means[1] <= means[2]
        assert means[2] > means[0]

    def test_higher_uptake_raises_ces(self):
        lo = generate_study(PhantomParams(seed=9, uptake=0.2))
        hi = generate_study(PhantomParams(seed=9, uptake=0.8))
        assert ces(MEAN_GRAD, hi) > ces(MEAN_GRAD, lo)

    def test_vessels_hypointense_in_hbp(self):
        params = PhantomParams(seed=4, uptake=0.6)
        study = generate_study(params)
        geom = _Geometry(params)
        vessels = geom.vessel_w > 0.9
        parenchyma = (study.liver_mask.data > 0) & (geom.vessel_w < 0.01)
        hbp = study.phases["hbp"].data
        assert hbp[vessels].mean() < hbp[parenchyma].mean()

    def test_lesion_outside_liver_rejected(self):
        bad = LesionSpec("cyst", (1, 1, 1), 3.0, -0.2)
        with pytest.raises(DomainError, match="outside the liver"):
            generate_study(PhantomParams(seed=0, lesions=(bad,)))

    def test_bad_shape_rejected(self):
        with pytest.raises(DomainError):
            PhantomParams(seed=0, shape=(4, 4, 4))

    def test_lesions_visible_in_hbp(self):
        center = (19, 21, 12)
        lesion = LesionSpec("hypointense", center, 4.0, -0.25)
        with_l = generate_study(PhantomParams(seed=5, uptake=0.7, lesions=(lesion,)))
        without = generate_study(PhantomParams(seed=5, uptake=0.7))
        assert with_l.phases["hbp"].data[center] < without.phases["hbp"].data[center]

    def test_mask_nonempty_and_binary(self):
        study = generate_study(PhantomParams(seed=3))
        vals = np.unique(study.liver_mask.data)
        assert study.liver_mask.data.sum() > 0
        assert set(vals.tolist()) <= {0, 1}

    def test_phases_voxel_aligned_without_misregistration(self):
        study = generate_study(PhantomParams(seed=6, uptake=0.5))
        shift = cc_peak_shift(
            study.phases["transitional"].data, study.phases["hbp"].data
        )
        assert shift == (0, 0, 0)

    def test_misregistration_moves_the_inputs(self):
        study = generate_study(
            PhantomParams(seed=6, uptake=0.5, misregistration_shift=(3.0, -2.0, 0.0))
        )
        shift = cc_peak_shift(
            study.phases["transitional"].data, study.phases["hbp"].data
        )
        assert shift == (3, -2, 0)


class TestGenerateCohort:
    def test_reproducible_distinct_ids(self):
        a = generate_cohort(10, seed=7)
        b = generate_cohort(10, seed=7)
        ids = [s.patient_id for s in a]
        assert len(set(ids)) == 10
        assert ids == [s.patient_id for s in b]
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.phases["hbp"].data, sb.phases["hbp"].data)

    def test_zero_uptake_range_gives_near_zero_ces(self):
        cohort = generate_cohort(5, seed=3, u_range=(0.0, 0.0))
        for study in cohort:
            assert abs(ces(MEAN_GRAD, study)) < 1e-9

    def test_high_uptake_range_gives_positive_ces(self):
        cohort = generate_cohort(6, seed=8, u_range=(0.5, 1.0))
        for study in cohort:
            assert ces(MEAN_GRAD, study) > 0

    def test_uptake_rank_correlates_with_ces(self):
        cohort = generate_cohort(20, seed=11)
        us = [s.metadata["uptake"] for s in cohort]
        cs = [ces(MEAN_GRAD, s) for s in cohort]
        rho = stats.spearmanr(us, cs).statistic
        assert rho > 0.9

    def test_empty_range_rejected(self):
        with pytest.raises(DomainError):
            generate_cohort(3, seed=0, u_range=(0.8, 0.2))
        with pytest.raises(DomainError):
            generate_cohort(0, seed=0)
