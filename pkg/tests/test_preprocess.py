"""Bias field estimation/correction, body crop, registration, full pipeline."""

import numpy as np
import pytest

from hbpsynth.errors import DomainError, GridMismatchError, MissingPhaseError, PipelineStepError
from hbpsynth.phantom import PhantomParams, generate_study
from hbpsynth.preprocess import (
    PipelineConfig,
    apply_crop,
    body_crop,
    correct_bias,
    estimate_bias_field,
    register_to_hbp,
    run_pipeline,
)
from hbpsynth.volume import Volume3D, normalize_intensity

from .test_phantom import cc_peak_shift


def vol(data, spacing=(1.0, 1.0, 1.0)):
    return Volume3D(
        np.asarray(data, dtype=np.float64),
        spacing,
        np.diag([-spacing[0], -spacing[1], -spacing[2], 1.0]),
    )


def known_field(shape, coefs=(0.15, -0.1, 0.08, 0.05, -0.04, 0.03, 0.06, -0.05, 0.04)):
    xs = [np.linspace(-1, 1, n) for n in shape]
    X, Y, Z = np.meshgrid(*xs, indexing="ij")
    terms = [X, Y, Z, X * Y, X * Z, Y * Z, X * X, Y * Y, Z * Z]
    log_field = sum(c * t for c, t in zip(coefs, terms))
    return np.exp(log_field)


class TestBiasField:
    def test_constant_volume_gives_unit_field(self):
        v = vol(np.full((8, 8, 6), 2.0))
        mask = vol(np.ones((8, 8, 6)))
        field = estimate_bias_field(v, mask, degree=2)
        np.testing.assert_allclose(field.data, 1.0, atol=1e-10)

    def test_degree_zero_gives_unit_field(self):
        rng = np.random.default_rng(0)
        v = vol(rng.uniform(0.5, 2.0, (6, 6, 4)))
        mask = vol(np.ones((6, 6, 4)))
        field = estimate_bias_field(v, mask, degree=0)
        np.testing.assert_allclose(field.data, 1.0, atol=1e-12)

    def test_recovers_known_degree2_field(self):
        shape = (16, 16, 10)
        true_field = known_field(shape)
        flat = np.full(shape, 0.6)
        v = vol(flat * true_field)
        mask = vol(np.ones(shape))
        est = estimate_bias_field(v, mask, degree=2)
        expected = true_field / true_field.mean()
        rel = np.abs(est.data - expected) / expected
        assert rel.max() < 1e-3

    def test_two_pass_residual_near_unity(self):
        params = PhantomParams(seed=13, uptake=0.5, bias_amplitude=0.3)
        study = generate_study(params)
        v = study.phases["hbp"]
        body = v.with_data((v.data > 0.05 * v.data.max()).astype(np.uint8))
        field = estimate_bias_field(v, body, degree=2)
        corrected = correct_bias(v, field)
        refit = estimate_bias_field(corrected, body, degree=2)
        inside = refit.data[body.data > 0]
        assert np.abs(inside - 1.0).max() < 1e-2

    def test_correction_preserves_regional_mean_ordering(self):
        """Rank flips after correction only where the residual field's
        dynamic range could explain them."""
        from scipy import ndimage

        clean = generate_study(PhantomParams(seed=14, uptake=0.5))
        biased = generate_study(PhantomParams(seed=14, uptake=0.5, bias_amplitude=0.3))
        v = biased.phases["hbp"]
        body = v.with_data((v.data > 0.05 * v.data.max()).astype(np.uint8))
        fld = estimate_bias_field(v, body, degree=2)
        corrected = correct_bias(v, fld)

        def regional_means(volume):
            smoothed = ndimage.gaussian_filter(volume.data, 2.0)
            means = []
            for i in range(4, 44, 10):
                for j in range(4, 44, 10):
                    for k in range(4, 20, 8):
                        if body.data[i, j, k]:
                            means.append(smoothed[i, j, k])
            return np.array(means)

        reference = regional_means(clean.phases["hbp"])
        after = regional_means(corrected)
        # residual multiplicative error of the fit inside the body
        true_ratio = biased.phases["hbp"].data / np.maximum(clean.phases["hbp"].data, 1e-9)
        residual = (true_ratio / fld.data)[body.data > 0]
        tolerance = float(residual.max() / residual.min()) - 1.0
        for a in range(len(reference)):
            for b in range(len(reference)):
                gap = reference[a] - reference[b]
                if gap > tolerance * max(reference[a], reference[b]):
                    assert after[a] > after[b], (
                        f"rank inversion beyond the residual range at ({a},{b})"
                    )

    def test_empty_mask_rejected(self):
        v = vol(np.ones((4, 4, 4)))
        with pytest.raises(DomainError, match="empty"):
            estimate_bias_field(v, vol(np.zeros((4, 4, 4))), degree=2)

    def test_nonpositive_intensities_rejected(self):
        v = vol(np.zeros((4, 4, 4)))
        with pytest.raises(DomainError, match="positive"):
            estimate_bias_field(v, vol(np.ones((4, 4, 4))), degree=2)


class TestCorrectBias:
    def test_unit_field_is_identity(self):
        rng = np.random.default_rng(1)
        v = vol(rng.random((5, 5, 4)))
        out = correct_bias(v, vol(np.ones((5, 5, 4))))
        np.testing.assert_array_equal(out.data, v.data)

    def test_exact_cancellation(self):
        field = known_field((6, 6, 4))
        out = correct_bias(vol(field), vol(field))
        np.testing.assert_allclose(out.data, 1.0, atol=1e-12)

    def test_grid_mismatch_rejected(self):
        with pytest.raises(GridMismatchError):
            correct_bias(vol(np.ones((4, 4, 4))), vol(np.ones((5, 4, 4))))

    def test_nonpositive_field_rejected(self):
        with pytest.raises(DomainError):
            correct_bias(vol(np.ones((4, 4, 4))), vol(np.zeros((4, 4, 4))))


class TestBodyCrop:
    def test_known_margins_removed_exactly(self):
        inner = np.random.default_rng(2).uniform(0.5, 1.0, (10, 12, 6))
        data = np.zeros((26, 28, 22))
        data[8:18, 8:20, 8:14] = inner
        v = vol(data)
        cropped, box = body_crop(v, threshold=0.1)
        assert box == ((8, 18), (8, 20), (8, 14))
        np.testing.assert_array_equal(cropped.data, inner)
        # world position of the new origin voxel is preserved
        np.testing.assert_allclose(
            cropped.voxel_to_world((0, 0, 0)), v.voxel_to_world((8, 8, 8))
        )

    def test_no_margins_keeps_full_volume(self):
        v = vol(np.random.default_rng(3).uniform(0.5, 1.0, (6, 6, 6)))
        cropped, box = body_crop(v, threshold=0.1)
        assert box == ((0, 6), (0, 6), (0, 6))
        np.testing.assert_array_equal(cropped.data, v.data)

    def test_box_shrinks_monotonically_with_threshold(self):
        rng = np.random.default_rng(4)
        data = np.zeros((20, 20, 10))
        xx, yy, zz = np.meshgrid(
            np.linspace(-1, 1, 20), np.linspace(-1, 1, 20), np.linspace(-1, 1, 10),
            indexing="ij",
        )
        data = np.clip(1.0 - np.sqrt(xx**2 + yy**2 + zz**2), 0, None)
        v = vol(data)
        sizes = []
        for threshold in (0.2, 0.5, 0.8):
            _, box = body_crop(v, threshold)
            sizes.append(sum(b1 - b0 for b0, b1 in box))
        assert sizes[0] >= sizes[1] >= sizes[2]

    def test_all_below_threshold_rejected(self):
        with pytest.raises(DomainError):
            body_crop(vol(np.zeros((4, 4, 4))), 0.5)

    def test_bad_threshold_rejected(self):
        v = vol(np.ones((4, 4, 4)))
        for threshold in (0.0, 1.0, -0.5):
            with pytest.raises(DomainError):
                body_crop(v, threshold)


class TestRegistration:
    def test_self_registration_is_identity(self):
        study = generate_study(PhantomParams(seed=21, uptake=0.5))
        fixed = study.phases["hbp"]
        res = register_to_hbp(fixed, fixed, mode="affine")
        np.testing.assert_allclose(res.transform, np.eye(4), atol=1e-3)

    @pytest.mark.parametrize("shift_mm", [(3.0, -2.0, 0.0), (5.0, 0.0, 2.0)])
    def test_recovers_injected_shift(self, shift_mm):
        params = PhantomParams(seed=22, uptake=0.6, misregistration_shift=shift_mm)
        study = generate_study(params)
        moving = study.phases["transitional"]
        fixed = study.phases["hbp"]
        res = register_to_hbp(moving, fixed, mode="affine")
        # content moved by shift_mm/spacing voxels; the fixed->moving world
        # map must translate by A @ (that voxel shift)
        shift_vox = np.asarray(shift_mm) / np.asarray(fixed.spacing)
        expected = fixed.affine[:3, :3] @ shift_vox
        err_vox = np.abs(res.transform[:3, 3] - expected) / np.asarray(fixed.spacing)
        assert np.all(err_vox <= 0.5), f"translation error {err_vox} voxels"
        np.testing.assert_allclose(res.transform[:3, :3], np.eye(3), atol=0.05)

    def test_identity_mode_passthrough(self):
        study = generate_study(PhantomParams(seed=23))
        moving = study.phases["precontrast"]
        res = register_to_hbp(moving, study.phases["hbp"], mode="identity")
        assert res.volume is moving
        np.testing.assert_array_equal(res.transform, np.eye(4))

    def test_unknown_mode_rejected(self):
        study = generate_study(PhantomParams(seed=23))
        with pytest.raises(DomainError):
            register_to_hbp(study.phases["hbp"], study.phases["hbp"], mode="rigid")


class TestRunPipeline:
    def clean_cfg(self):
        return PipelineConfig(
            target_inplane_spacing=(1.0, 1.0),
            bias_poly_degree=0,
            crop_threshold=0.05,
            registration="identity",
        )

    def test_clean_phantom_is_near_identity(self):
        study = generate_study(PhantomParams(seed=31, uptake=0.6))
        out = run_pipeline(study, self.clean_cfg())
        box = tuple(tuple(b) for b in out.metadata["preprocess"]["crop_box"])
        for name in ("precontrast", "transitional", "hbp"):
            expected = normalize_intensity(apply_crop(study.phases[name], box))
            assert out.phases[name].shape == expected.shape
            dev = np.abs(out.phases[name].data - expected.data).max()
            assert dev < 1e-3, f"{name} deviates by {dev}"

    def test_misregistered_phantom_realigned(self):
        params = PhantomParams(seed=32, uptake=0.7, misregistration_shift=(3.0, -2.0, 0.0))
        cfg = PipelineConfig(
            target_inplane_spacing=(1.0, 1.0), bias_poly_degree=0, registration="affine"
        )
        out = run_pipeline(generate_study(params), cfg)
        shift = cc_peak_shift(out.phases["transitional"].data, out.phases["hbp"].data)
        assert shift == (0, 0, 0)

    def test_phases_share_grid(self):
        study = generate_study(PhantomParams(seed=33, uptake=0.5, bias_amplitude=0.2))
        cfg = PipelineConfig(target_inplane_spacing=(0.8398, 0.8398), registration="identity")
        out = run_pipeline(study, cfg)
        shapes = {v.shape for v in out.phases.values()} | {out.liver_mask.shape}
        assert len(shapes) == 1
        for v in out.phases.values():
            assert v.data.min() >= 0.0 and v.data.max() <= 1.0
        assert set(np.unique(out.liver_mask.data)) <= {0, 1}
        assert out.aligned()

    def test_missing_phase_rejected(self):
        study = generate_study(PhantomParams(seed=34))
        del study.phases["hbp"]
        with pytest.raises(MissingPhaseError):
            run_pipeline(study, self.clean_cfg())

    def test_step_error_annotated(self):
        study = generate_study(PhantomParams(seed=35))
        # zero out one phase so bias estimation fails inside the pipeline
        study.phases["transitional"] = study.phases["transitional"].with_data(
            np.zeros_like(study.phases["transitional"].data)
        )
        cfg = PipelineConfig(bias_poly_degree=2, registration="identity")
        with pytest.raises(PipelineStepError) as err:
            run_pipeline(study, cfg)
        assert err.value.step in ("bias", "crop")
