import numpy as np
import pytest

from segsynth import (
    Geometry,
    GeometryError,
    InvalidModeError,
    LabelMap,
    ScalarVolume,
    center_crop_pad,
    resample,
)

from conftest import make_geometry, make_labels, make_scalar


class TestGeometry:
    def test_isotropic_roundtrip(self):
        g = Geometry.isotropic((3, 4, 5), 2.0, origin=(1.0, -2.0, 3.0))
        assert g.shape == (3, 4, 5)
        assert g.spacing == (2.0, 2.0, 2.0)
        assert np.allclose(g.world_from_index((1, 1, 1)), (3.0, 0.0, 5.0))

    def test_spacing_must_match_affine(self):
        affine = np.diag([1.0, 1.0, 2.0, 1.0])
        with pytest.raises(GeometryError):
            Geometry((2, 2, 2), (1.0, 1.0, 1.0), affine)

    def test_rejects_bad_shapes(self):
        with pytest.raises(GeometryError):
            Geometry((0, 2, 2), (1.0, 1.0, 1.0), np.eye(4))
        with pytest.raises(GeometryError):
            Geometry((2, 2, 2), (1.0, -1.0, 1.0), np.diag([1.0, -1.0, 1.0, 1.0]))

    def test_from_affine_derives_spacing(self):
        affine = np.diag([1.36, 1.36, 5.49, 1.0])
        g = Geometry.from_affine((2, 2, 2), affine)
        assert np.allclose(g.spacing, (1.36, 1.36, 5.49))


class TestContainers:
    def test_scalar_rejects_nan(self):
        arr = np.zeros((2, 2, 2))
        arr[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            make_scalar(arr)

    def test_labels_reject_negative(self):
        with pytest.raises(ValueError):
            make_labels(np.full((2, 2, 2), -1, dtype=np.int32))

    def test_labels_reject_float(self):
        g = make_geometry((2, 2, 2))
        with pytest.raises(ValueError):
            LabelMap(g, np.zeros((2, 2, 2), dtype=np.float32))

    def test_arrays_are_frozen(self):
        vol = make_scalar(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            vol.values[0, 0, 0] = 1.0


class TestResample:
    def test_identity_geometry_is_identity(self, rng):
        vals = rng.random((6, 5, 4))
        vol = make_scalar(vals)
        out = resample(vol, vol.geometry, mode="trilinear")
        assert np.allclose(out.values, vals)

    def test_identity_geometry_labels(self, rng):
        labels = make_labels(rng.integers(0, 5, (6, 5, 4), dtype=np.int32))
        out = resample(labels, labels.geometry)
        assert np.array_equal(out.labels, labels.labels)

    def test_constant_volume_stays_constant(self):
        vol = make_scalar(np.full((8, 8, 8), 3.25))
        target = make_geometry((5, 7, 3), spacing=(1.3, 0.9, 2.0), origin=(0.5, 0.5, 0.5))
        out = resample(vol, target, mode="trilinear")
        inside = out.values != 0  # boundary voxels may fall outside the source
        assert np.allclose(out.values[inside], 3.25)

    def test_ramp_half_voxel_offsets_match_hand_interpolation(self):
        # Values 0,1,2,3 along x; sample at x = 0.5, 1.5, 2.5 via a grid
        # shifted by half a voxel.
        vals = np.zeros((4, 3, 3))
        vals[:] = np.arange(4)[:, None, None]
        vol = make_scalar(vals)
        target = make_geometry((3, 3, 3), origin=(0.5, 0.0, 0.0))
        out = resample(vol, target, mode="trilinear")
        expected = np.zeros((3, 3, 3))
        expected[:] = np.array([0.5, 1.5, 2.5])[:, None, None]
        assert np.allclose(out.values, expected)

    def test_trilinear_on_labelmap_rejected(self):
        labels = make_labels(np.zeros((3, 3, 3), dtype=np.int32))
        with pytest.raises(InvalidModeError):
            resample(labels, labels.geometry, mode="trilinear")

    def test_no_overshoot(self, rng):
        vals = rng.normal(size=(9, 9, 9))
        vol = make_scalar(vals)
        target = make_geometry((14, 14, 14), spacing=(0.61, 0.61, 0.61), origin=(0.1, 0.2, 0.3))
        out = resample(vol, target, mode="trilinear")
        lo = min(vals.min(), 0.0)
        hi = max(vals.max(), 0.0)
        assert out.values.min() >= lo - 1e-12
        assert out.values.max() <= hi + 1e-12

    def test_out_of_bounds_reads_background(self):
        vol = make_scalar(np.ones((3, 3, 3)))
        target = make_geometry((3, 3, 3), origin=(10.0, 10.0, 10.0))
        out = resample(vol, target, mode="trilinear")
        assert np.all(out.values == 0.0)


class TestCenterCropPad:
    def test_crop_to_canonical_grid(self, rng):
        # 40x40x30 -> 30x30x25 keeps the central block.
        vals = rng.integers(0, 9, (40, 40, 30), dtype=np.int32)
        labels = make_labels(vals, spacing=(1.5, 1.5, 1.5))
        out = center_crop_pad(labels, (30, 30, 25))
        assert out.geometry.shape == (30, 30, 25)
        assert out.geometry.spacing == (1.5, 1.5, 1.5)
        assert np.array_equal(out.labels, vals[5:35, 5:35, 2:27])

    def test_identity_when_target_equals_shape(self, rng):
        vals = rng.integers(0, 4, (6, 7, 8), dtype=np.int32)
        labels = make_labels(vals)
        out = center_crop_pad(labels, (6, 7, 8))
        assert np.array_equal(out.labels, vals)
        assert np.allclose(out.geometry.affine, labels.geometry.affine)

    def test_pad_centers_input_and_preserves_foreground(self):
        vals = np.zeros((10, 10, 10), dtype=np.int32)
        vals[2:8, 2:8, 2:8] = 7
        labels = make_labels(vals)
        before = labels.foreground_count()
        out = center_crop_pad(labels, (30, 30, 25))
        assert out.geometry.shape == (30, 30, 25)
        assert out.foreground_count() == before
        assert np.array_equal(out.labels[10:20, 10:20, 7:17], vals)

    def test_odd_difference_removes_extra_from_high_side(self):
        vals = np.arange(5, dtype=np.int32).reshape(5, 1, 1) * np.ones((1, 1, 1), np.int32)
        labels = make_labels(np.broadcast_to(vals, (5, 1, 1)).copy())
        out = center_crop_pad(labels, (2, 1, 1))
        # diff = 3: one voxel off the low side, two off the high side
        assert list(out.labels[:, 0, 0]) == [1, 2]

    def test_world_positions_preserved(self):
        labels = make_labels(np.ones((6, 6, 6), dtype=np.int32), spacing=(2.0, 2.0, 2.0))
        out = center_crop_pad(labels, (4, 8, 6))
        # Cropped axis: new index 0 was old index 1 -> world 2.0
        assert np.allclose(out.geometry.world_from_index((0, 1, 0)), (2.0, 0.0, 0.0))
        # Padded axis: new index 1 is old index 0 -> world 0.0

    def test_spacing_never_changes_and_crop_monotone(self, rng):
        for _ in range(10):
            shape = tuple(rng.integers(3, 12, 3))
            target = tuple(rng.integers(1, 15, 3))
            labels = make_labels(
                rng.integers(0, 3, shape, dtype=np.int32), spacing=(0.7, 1.1, 2.3)
            )
            out = center_crop_pad(labels, target)
            assert out.geometry.spacing == labels.geometry.spacing
            if all(t >= s for t, s in zip(target, shape)):
                assert out.foreground_count() == labels.foreground_count()
            else:
                assert out.foreground_count() <= labels.foreground_count()
