"""Volume model, NIfTI round-trips, reorientation, resampling, normalization."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hbpsynth.errors import DomainError, NiftiError
from hbpsynth.volume import (
    Volume3D,
    load_volume,
    normalize_intensity,
    orientation_code,
    reorient,
    reorient_to_lpi,
    resample_inplane,
    save_volume,
)


# --- independent minimal NIfTI-1 writer/reader (cross-check oracle) ----------
# Written from the format table, deliberately not sharing code with the
# package implementation.

_ORACLE_FMT = "<i10s18sihcB8h3fhhhh8ffffhBBffffii80s24shh3f3f4f4f4f16s4s"


def oracle_write_nifti(path, arr, spacing, affine):
    arr = np.asarray(arr, dtype=np.float32)
    dim = [3, *arr.shape, 1, 1, 1, 1]
    pixdim = [1.0, *spacing, 1.0, 1.0, 1.0, 1.0]
    header = struct.pack(
        _ORACLE_FMT,
        348, b"", b"", 0, 0, b"r", 0,
        *dim,
        0.0, 0.0, 0.0, 0, 16, 32, 0,
        *pixdim,
        352.0, 1.0, 0.0, 0, 0, 0,
        0.0, 0.0, 0.0, 0.0, 0, 0, b"", b"",
        0, 2,
        0.0, 0.0, 0.0,
        0.0, 0.0, 0.0,
        *[float(x) for x in affine[0]],
        *[float(x) for x in affine[1]],
        *[float(x) for x in affine[2]],
        b"", b"n+1\x00",
    )
    assert len(header) == 348
    with open(path, "wb") as fh:
        fh.write(header + b"\x00" * 4 + arr.tobytes(order="F"))


def oracle_read_nifti(path):
    raw = open(path, "rb").read()
    fields = struct.unpack_from(_ORACLE_FMT, raw, 0)
    dim = fields[7:15]
    datatype = fields[19]
    assert datatype == 16, "oracle only reads float32"
    shape = tuple(dim[1:4])
    offset = int(fields[30])
    n = int(np.prod(shape))
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape, order="F")
    srow = np.array(fields[52:64], dtype=np.float64).reshape(3, 4)
    return data, np.vstack([srow, [0, 0, 0, 1]])


def make_volume(shape=(4, 5, 3), spacing=(1.0, 2.0, 0.5), seed=0, affine=None):
    rng = np.random.default_rng(seed)
    if affine is None:
        affine = np.diag([-spacing[0], -spacing[1], -spacing[2], 1.0])
    return Volume3D(rng.random(shape), spacing, np.asarray(affine, dtype=np.float64))


class TestNiftiIO:
    def test_round_trip_grid_bit_identical(self, tmp_path):
        v = make_volume()
        save_volume(v, tmp_path / "a.nii")
        v2 = load_volume(tmp_path / "a.nii")
        np.testing.assert_array_equal(v2.data, v.data)

    def test_round_trip_stabilizes_header(self, tmp_path):
        # after one save/load, all header-borne values are exactly representable
        v = make_volume(spacing=(0.75, 1.5, 3.0))
        save_volume(v, tmp_path / "a.nii")
        v2 = load_volume(tmp_path / "a.nii")
        save_volume(v2, tmp_path / "b.nii")
        v3 = load_volume(tmp_path / "b.nii")
        assert (tmp_path / "a.nii").read_bytes() == (tmp_path / "b.nii").read_bytes()
        np.testing.assert_array_equal(v2.data, v3.data)
        assert v2.spacing == v3.spacing
        np.testing.assert_array_equal(v2.affine, v3.affine)

    def test_gzip_round_trip(self, tmp_path):
        v = make_volume()
        save_volume(v, tmp_path / "a.nii.gz")
        v2 = load_volume(tmp_path / "a.nii.gz")
        np.testing.assert_array_equal(v2.data, v.data)

    def test_load_file_from_independent_writer(self, tmp_path):
        rng = np.random.default_rng(7)
        arr = rng.random((4, 4, 2)).astype(np.float32)
        affine = np.diag([1.0, 1.0, 2.0, 1.0])
        oracle_write_nifti(tmp_path / "oracle.nii", arr, (1.0, 1.0, 2.0), affine)
        v = load_volume(tmp_path / "oracle.nii")
        np.testing.assert_array_equal(v.data, arr)
        np.testing.assert_array_equal(v.affine, affine)
        assert v.spacing == (1.0, 1.0, 2.0)

    def test_independent_reader_on_our_file(self, tmp_path):
        v = Volume3D(
            np.arange(24, dtype=np.float32).reshape(2, 3, 4),
            (1.0, 1.0, 1.0),
            np.eye(4),
        )
        save_volume(v, tmp_path / "ours.nii")
        data, affine = oracle_read_nifti(tmp_path / "ours.nii")
        np.testing.assert_array_equal(data, v.data)
        np.testing.assert_array_equal(affine, v.affine)

    def test_truncated_file_is_malformed(self, tmp_path):
        v = make_volume()
        save_volume(v, tmp_path / "a.nii")
        raw = (tmp_path / "a.nii").read_bytes()
        (tmp_path / "short.nii").write_bytes(raw[:100])
        with pytest.raises(NiftiError):
            load_volume(tmp_path / "short.nii")
        (tmp_path / "nodata.nii").write_bytes(raw[: 348 + 10])
        with pytest.raises(NiftiError, match="vox_offset"):
            load_volume(tmp_path / "nodata.nii")

    def test_missing_file(self, tmp_path):
        with pytest.raises(NiftiError, match="path"):
            load_volume(tmp_path / "nope.nii")

    def test_unsupported_datatype_names_field(self, tmp_path):
        v = make_volume()
        save_volume(v, tmp_path / "a.nii")
        raw = bytearray((tmp_path / "a.nii").read_bytes())
        struct.pack_into("<h", raw, 70, 1)  # DT_BINARY, unsupported
        (tmp_path / "bad.nii").write_bytes(bytes(raw))
        with pytest.raises(NiftiError, match="datatype"):
            load_volume(tmp_path / "bad.nii")

    def test_integer_dtype_preserved(self, tmp_path):
        v = Volume3D(
            np.arange(8, dtype=np.int16).reshape(2, 2, 2), (1, 1, 1), np.eye(4)
        )
        save_volume(v, tmp_path / "i.nii")
        v2 = load_volume(tmp_path / "i.nii")
        assert v2.data.dtype == np.int16
        np.testing.assert_array_equal(v2.data, v.data)


def _random_orientation_affine(rng, spacing):
    perm = rng.permutation(3)
    signs = rng.choice([-1.0, 1.0], size=3)
    affine = np.zeros((4, 4))
    affine[3, 3] = 1.0
    for j in range(3):
        affine[perm[j], j] = signs[j] * spacing[j]
    affine[:3, 3] = rng.uniform(-10, 10, 3)
    return affine


class TestReorient:
    def test_identity_when_already_lpi(self):
        v = make_volume()
        assert v.orientation == "LPI"
        out = reorient_to_lpi(v)
        np.testing.assert_array_equal(out.data, v.data)
        np.testing.assert_array_equal(out.affine, v.affine)

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        affine = _random_orientation_affine(rng, (1.0, 1.0, 2.0))
        v = Volume3D(rng.random((4, 5, 6)), (1.0, 1.0, 2.0), affine)
        once = reorient_to_lpi(v)
        twice = reorient_to_lpi(once)
        np.testing.assert_array_equal(once.data, twice.data)
        np.testing.assert_array_equal(once.affine, twice.affine)

    def test_world_points_unchanged_on_ras_ramp(self):
        # ramp along the first voxel axis, RAS-coded volume
        shape = (8, 6, 5)
        data = np.broadcast_to(
            np.arange(shape[0], dtype=np.float64)[:, None, None], shape
        ).copy()
        affine = np.diag([1.0, 1.5, 2.0, 1.0])
        v = Volume3D(data, (1.0, 1.5, 2.0), affine)
        assert v.orientation == "RAS"
        out = reorient_to_lpi(v)
        assert out.orientation == "LPI"
        rng = np.random.default_rng(3)
        idx = rng.uniform([0, 0, 0], np.array(shape) - 1, size=(10, 3))
        pts = v.voxel_to_world(idx)
        np.testing.assert_allclose(
            out.sample_world(pts), v.sample_world(pts), atol=1e-9
        )

    @given(seed=st.integers(0, 200), target=st.sampled_from(["LPI", "RAS", "PIR", "SLA"]))
    @settings(max_examples=40, deadline=None)
    def test_multiset_preserved_any_orientation(self, seed, target):
        rng = np.random.default_rng(seed)
        spacing = tuple(rng.uniform(0.5, 3.0, 3))
        affine = _random_orientation_affine(rng, spacing)
        v = Volume3D(rng.random((3, 4, 5)), spacing, affine)
        out = reorient(v, target)
        assert out.orientation == target
        assert sorted(out.data.ravel()) == sorted(v.data.ravel())

    def test_unrecognized_code_rejected(self):
        v = make_volume()
        with pytest.raises(DomainError):
            reorient(v, "LLS")
        with pytest.raises(DomainError):
            reorient(v, "XYZ")


class TestResample:
    def test_identity_at_same_spacing(self):
        v = make_volume(spacing=(1.0, 1.0, 2.0))
        out = resample_inplane(v, (1.0, 1.0))
        np.testing.assert_allclose(out.data, v.data, atol=1e-12)
        assert out.shape == v.shape

    def test_halving_spacing_doubles_dims(self):
        v = make_volume(shape=(10, 12, 4), spacing=(2.0, 2.0, 3.0))
        out = resample_inplane(v, (1.0, 1.0))
        assert abs(out.shape[0] - 20) <= 1 and abs(out.shape[1] - 24) <= 1
        assert out.shape[2] == 4

    def test_linear_ramp_matches_analytic(self):
        # value = 3*x_mm + 2*y_mm on a unit-spacing grid, downsampled 2x
        shape = (16, 16, 3)
        x = np.arange(shape[0])[:, None, None]
        y = np.arange(shape[1])[None, :, None]
        data = np.broadcast_to(3.0 * x + 2.0 * y, shape).astype(np.float64).copy()
        v = Volume3D(data, (1.0, 1.0, 1.0), np.diag([-1.0, -1.0, -1.0, 1.0]))
        out = resample_inplane(v, (2.0, 2.0))
        xo = np.arange(out.shape[0])[:, None, None] * 2.0
        yo = np.arange(out.shape[1])[None, :, None] * 2.0
        expected = np.broadcast_to(3.0 * xo + 2.0 * yo, out.shape)
        np.testing.assert_allclose(out.data, expected, atol=1e-6)

    def test_fov_preserved_within_one_voxel(self):
        v = make_volume(shape=(20, 20, 4), spacing=(1.0, 1.0, 2.0))
        out = resample_inplane(v, (1.7, 1.7))
        for ax in range(2):
            assert abs(out.shape[ax] * 1.7 - v.shape[ax] * 1.0) <= 1.7

    def test_rejects_nonpositive_spacing(self):
        v = make_volume()
        with pytest.raises(DomainError):
            resample_inplane(v, (0.0, 1.0))


class TestNormalize:
    def test_linear_map(self):
        data = np.full((2, 2, 2), 4.0)
        data[0, 0, 0] = 2.0
        data[1, 1, 1] = 6.0
        v = Volume3D(data, (1, 1, 1), np.eye(4))
        out = normalize_intensity(v)
        assert out.data[0, 1, 0] == pytest.approx(0.5)
        assert out.data.min() == 0.0 and out.data.max() == 1.0

    def test_constant_becomes_zero(self):
        v = Volume3D(np.full((3, 3, 3), 7.5), (1, 1, 1), np.eye(4))
        out = normalize_intensity(v)
        assert np.all(out.data == 0.0)

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_range_endpoints_and_idempotence(self, seed):
        rng = np.random.default_rng(seed)
        v = Volume3D(rng.normal(5, 3, (4, 4, 4)), (1, 1, 1), np.eye(4))
        out = normalize_intensity(v)
        assert out.data.min() == pytest.approx(0.0)
        assert out.data.max() == pytest.approx(1.0)
        again = normalize_intensity(out)
        np.testing.assert_allclose(again.data, out.data, atol=1e-12)


class TestVolumeInvariants:
    def test_rejects_bad_volumes(self):
        with pytest.raises(DomainError):
            Volume3D(np.zeros((2, 2)), (1, 1, 1), np.eye(4))
        with pytest.raises(DomainError):
            Volume3D(np.zeros((2, 2, 2)), (1, 0.0, 1), np.eye(4))
        singular = np.eye(4)
        singular[0, 0] = 0.0
        with pytest.raises(DomainError):
            Volume3D(np.zeros((2, 2, 2)), (1, 1, 1), singular)

    def test_orientation_consistency(self):
        assert orientation_code(np.diag([-1.0, -1, -1, 1])) == "LPI"
        assert orientation_code(np.diag([1.0, 1, 1, 1])) == "RAS"
        aff = np.zeros((4, 4))
        aff[3, 3] = 1
        aff[0, 1] = 1.0  # axis1 -> +x
        aff[1, 0] = -1.0  # axis0 -> -y
        aff[2, 2] = 1.0
        assert orientation_code(aff) == "PRS"
