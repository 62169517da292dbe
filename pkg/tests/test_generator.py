import numpy as np
import pytest

from segsynth import (
    ClusteringConfig,
    ClusterSampler,
    GenerationConfig,
    LabelMap,
    ScalarVolume,
    apply_bias_field,
    apply_gamma_contrast,
    apply_noise,
    center_crop_pad,
    generate_training_pair,
    remove_arms,
    sample_spatial_transform,
    simulate_resolution,
    synthesize_intensities,
    warp_labels,
)
from segsynth.generator import (
    _displacement_field,
    _simulate_resolution,
    upsample_control_grid,
)

from conftest import make_geometry, make_labels, make_scalar


def small_config(**overrides):
    base = dict(
        target_shape=(24, 24, 20),
        target_spacing=(1.5, 1.5, 1.5),
        deformation_grid=4,
        bias_grid=3,
        clustering=ClusteringConfig(
            k_foreground_choices=(1, 2), k_background_choices=(2, 3)
        ),
    )
    base.update(overrides)
    return GenerationConfig(**base)


def zeroed_config(**overrides):
    base = dict(
        rotation_range=0.0,
        scale_range=(1.0, 1.0),
        shear_range=0.0,
        translation_range=0.0,
        deformation_std_max=0.0,
        bias_std_max=0.0,
        gamma_log_std=0.0,
        noise_std_max=0.0,
        slice_spacing_max=1.5,
        arm_removal_probability=0.0,
        gmm_std_range=(0.0, 0.0),
    )
    base.update(overrides)
    return small_config(**base)


def demo_subject(rng, shape=(16, 16, 16), n_labels=3, spacing=(1.5, 1.5, 1.5)):
    labels = rng.integers(0, n_labels + 1, shape).astype(np.int32)
    ct = rng.normal(80.0, 20.0, shape) + 40.0 * labels
    return make_scalar(ct, spacing), make_labels(labels, spacing)


class TestRemoveArms:
    def _arm_labels(self):
        arr = np.zeros((6, 6, 6), dtype=np.int32)
        arr[:2] = 1  # body
        arr[4:] = 9  # arm
        return make_labels(arr)

    def test_probability_zero_is_identity(self):
        labels = self._arm_labels()
        out = remove_arms(labels, {9}, np.random.default_rng(0), probability=0.0)
        assert np.array_equal(out.labels, labels.labels)

    def test_probability_one_clears_arms_only(self):
        labels = self._arm_labels()
        out = remove_arms(labels, {9}, np.random.default_rng(0), probability=1.0)
        assert np.count_nonzero(out.labels == 9) == 0
        assert np.count_nonzero(out.labels == 1) == np.count_nonzero(labels.labels == 1)

    def test_default_probability_frequency(self):
        labels = self._arm_labels()
        rng = np.random.default_rng(42)
        removed = sum(
            np.count_nonzero(remove_arms(labels, {9}, rng).labels == 9) == 0
            for _ in range(10_000)
        )
        assert abs(removed / 10_000 - 0.5) <= 0.02


class TestSpatialTransform:
    def test_zero_ranges_give_identity_field(self):
        config = zeroed_config()
        field = sample_spatial_transform((10, 10, 10), config, np.random.default_rng(0))
        assert np.abs(field).max() == 0.0

    def test_pure_translation(self):
        field = _displacement_field(
            (8, 8, 8),
            rotation_deg=(0.0, 0.0, 0.0),
            scale=(1.0, 1.0, 1.0),
            shear=(0.0, 0.0, 0.0),
            translation=(3.0, 0.0, 0.0),
            ctrl=None,
        )
        assert np.allclose(field[0], 3.0)
        assert np.abs(field[1]).max() == 0.0
        assert np.abs(field[2]).max() == 0.0

    def test_upsampled_grid_respects_smoothness_bound(self, rng):
        ctrl = rng.normal(0, 3.0, (4, 4, 4))
        shape = (17, 23, 11)
        field = upsample_control_grid(ctrl, shape).astype(np.float64)
        for axis in range(3):
            step = (ctrl.shape[axis] - 1) / (shape[axis] - 1)
            max_ctrl_diff = np.abs(np.diff(ctrl, axis=axis)).max()
            observed = np.abs(np.diff(field, axis=axis)).max()
            assert observed <= max_ctrl_diff * step + 1e-9

    def test_control_points_are_interpolated_exactly(self, rng):
        # When (n-1) is a multiple of (g-1) the control values appear verbatim.
        ctrl = rng.normal(0, 2.0, (3, 3, 3))
        field = upsample_control_grid(ctrl, (5, 5, 5))
        assert np.allclose(field[::2, ::2, ::2], ctrl, atol=1e-6)


class TestWarpLabels:
    def test_identity_field(self, rng):
        labels = make_labels(rng.integers(0, 5, (8, 8, 8)).astype(np.int32))
        field = np.zeros((3, 8, 8, 8), dtype=np.float32)
        out = warp_labels(labels, field)
        assert np.array_equal(out.labels, labels.labels)

    def test_integer_translation_is_exact_shift(self, rng):
        arr = rng.integers(0, 5, (8, 8, 8)).astype(np.int32)
        labels = make_labels(arr)
        field = np.zeros((3, 8, 8, 8), dtype=np.float32)
        field[0] = 2.0  # pull from x+2
        out = warp_labels(labels, field)
        expected = np.zeros_like(arr)
        expected[:6] = arr[2:]
        assert np.array_equal(out.labels, expected)

    def test_label_set_never_grows(self, rng):
        arr = rng.integers(0, 6, (10, 10, 10)).astype(np.int32)
        labels = make_labels(arr)
        in_set = set(np.unique(arr))
        for _ in range(100):
            field = rng.normal(0, 3.0, (3, 10, 10, 10)).astype(np.float32)
            out = warp_labels(labels, field)
            assert set(np.unique(out.labels)) <= in_set | {0}

    def test_shape_mismatch_rejected(self, rng):
        labels = make_labels(rng.integers(0, 2, (4, 4, 4)).astype(np.int32))
        with pytest.raises(Exception):
            warp_labels(labels, np.zeros((3, 5, 5, 5), dtype=np.float32))


class TestSynthesize:
    def test_zero_sigma_renders_piecewise_constant(self, rng):
        arr = rng.integers(0, 4, (8, 8, 8)).astype(np.int32)
        fine = make_labels(arr)
        table = {i: (float(10 * i), 0.0) for i in range(4)}
        out = synthesize_intensities(fine, table, np.random.default_rng(0))
        assert np.allclose(out.values, 10.0 * arr)

    def test_region_means_within_standard_error(self):
        arr = np.zeros((32, 32, 32), dtype=np.int32)
        arr[16:] = 1
        fine = make_labels(arr)
        table = {0: (40.0, 8.0), 1: (200.0, 15.0)}
        out = synthesize_intensities(fine, table, np.random.default_rng(1))
        for label, (mu, sd) in table.items():
            sel = out.values[arr == label]
            assert sel.size >= 10_000
            assert abs(sel.mean() - mu) <= 3.0 * sd / np.sqrt(sel.size)

    def test_missing_entry_names_label(self, rng):
        fine = make_labels(rng.integers(0, 3, (4, 4, 4)).astype(np.int32))
        with pytest.raises(ValueError, match="2"):
            synthesize_intensities(fine, {0: (0, 1), 1: (5, 1)}, np.random.default_rng(0))


class TestBiasField:
    def test_zero_std_is_identity(self, rng):
        image = make_scalar(rng.random((10, 10, 10)))
        config = zeroed_config()
        out = apply_bias_field(image, config, np.random.default_rng(0))
        assert np.allclose(out.values, image.values)

    def test_multiplier_strictly_positive(self, rng):
        config = small_config()
        image = make_scalar(np.full((8, 8, 8), 1.0))
        for seed in range(100):
            out = apply_bias_field(image, config, np.random.default_rng(seed))
            assert np.all(out.values > 0.0)

    def test_constant_image_ratio_reproduces_field(self):
        config = small_config(bias_std_max=0.4)
        image = make_scalar(np.full((9, 9, 9), 2.0))
        seed = 7
        out = apply_bias_field(image, config, np.random.default_rng(seed))
        mirror = np.random.default_rng(seed)
        std = float(mirror.uniform(0.0, config.bias_std_max))
        g = config.bias_grid
        ctrl = mirror.normal(0.0, std, size=(g, g, g))
        expected = np.exp(upsample_control_grid(ctrl.astype(np.float32), (9, 9, 9)))
        assert np.allclose(out.values / 2.0, expected, rtol=1e-6)


class TestGammaContrast:
    def test_zero_gamma_is_minmax_normalization(self, rng):
        vals = rng.normal(50, 20, (8, 8, 8))
        image = make_scalar(vals)
        out = apply_gamma_contrast(image, zeroed_config(), np.random.default_rng(0))
        expected = (vals - vals.min()) / (vals.max() - vals.min())
        assert np.allclose(out.values, expected)

    def test_monotonicity_preserved(self, rng):
        vals = rng.normal(0, 1, (6, 6, 6))
        image = make_scalar(vals)
        out = apply_gamma_contrast(image, small_config(), np.random.default_rng(3))
        order_in = np.argsort(vals.ravel(), kind="stable")
        sorted_out = out.values.ravel()[order_in]
        assert np.all(np.diff(sorted_out) >= -1e-12)

    def test_half_with_log_two_gamma_is_quarter(self):
        from segsynth.generator import _apply_gamma

        vals = np.zeros((2, 2, 2))
        vals.flat[:] = [0.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]
        image = make_scalar(vals)
        out = _apply_gamma(image, float(np.log(2.0)))
        assert out.values.flat[2] == pytest.approx(0.25, abs=1e-6)

    def test_constant_image_warns_and_zeros(self):
        image = make_scalar(np.full((4, 4, 4), 3.0))
        with pytest.warns(UserWarning):
            out = apply_gamma_contrast(image, zeroed_config(), np.random.default_rng(0))
        assert np.all(out.values == 0.0)


class TestNoise:
    def test_zero_noise_is_identity(self, rng):
        image = make_scalar(rng.random((8, 8, 8)))
        out = apply_noise(image, zeroed_config(), np.random.default_rng(0))
        assert np.allclose(out.values, image.values)

    def test_output_bounded(self, rng):
        image = make_scalar(rng.random((8, 8, 8)))
        out = apply_noise(image, small_config(noise_std_max=0.5), np.random.default_rng(1))
        assert out.values.min() >= 0.0
        assert out.values.max() <= 1.0

    def test_empirical_std_tracks_drawn_std(self):
        config = small_config(noise_std_max=0.08)
        image = make_scalar(np.full((40, 40, 40), 0.5))
        seed = 11
        out = apply_noise(image, config, np.random.default_rng(seed))
        drawn = float(np.random.default_rng(seed).uniform(0.0, config.noise_std_max))
        measured = float(out.values.std())
        assert abs(measured - drawn) <= 0.05 * drawn


class TestSimulateResolution:
    def test_drawn_spacing_equal_to_current_is_identity(self, rng):
        image = make_scalar(rng.random((10, 10, 10)), spacing=(1.5, 1.5, 1.5))
        out = simulate_resolution(image, zeroed_config(), np.random.default_rng(0))
        assert np.abs(out.values - image.values).max() < 1e-6

    def test_constant_image_stays_constant(self):
        image = make_scalar(np.full((12, 12, 12), 0.7), spacing=(1.5, 1.5, 1.5))
        out = _simulate_resolution(image, axis=2, spacing_mm=6.0)
        assert np.allclose(out.values, 0.7, atol=1e-6)

    def test_impulse_spreads_only_along_drawn_axis(self):
        vals = np.zeros((15, 15, 15))
        vals[7, 7, 7] = 1.0
        image = make_scalar(vals, spacing=(1.5, 1.5, 1.5))
        out = _simulate_resolution(image, axis=1, spacing_mm=7.0)
        support = np.argwhere(np.abs(out.values) > 1e-9)
        assert support.size > 3  # it actually spread
        assert set(np.unique(support[:, 0])) == {7}
        assert set(np.unique(support[:, 2])) == {7}
        assert len(np.unique(support[:, 1])) > 1


class TestGenerateTrainingPair:
    def test_output_geometry_and_range(self, rng):
        ct, labels = demo_subject(rng)
        config = small_config()
        pair = generate_training_pair(labels, (ct, labels), config, seed=5)
        assert pair.image.geometry.shape == (24, 24, 20)
        assert np.allclose(pair.image.geometry.spacing, (1.5, 1.5, 1.5))
        assert pair.image.values.min() >= 0.0
        assert pair.image.values.max() <= 1.0
        assert pair.target.geometry.approx_equal(pair.image.geometry)

    def test_same_seed_bitwise_identical(self, rng):
        ct, labels = demo_subject(rng)
        config = small_config()
        sampler = ClusterSampler(ct, labels, config.clustering)
        p1 = generate_training_pair(labels, sampler, config, seed=9)
        p2 = generate_training_pair(labels, sampler, config, seed=9)
        assert np.array_equal(p1.image.values, p2.image.values)
        assert np.array_equal(p1.target.labels, p2.target.labels)
        assert p1.provenance.to_json_dict() == p2.provenance.to_json_dict()

    def test_target_label_subset_and_range_compliance(self, rng):
        ct, labels = demo_subject(rng)
        config = small_config(arm_label_ids=(3,))
        sampler = ClusterSampler(ct, labels, config.clustering)
        in_set = set(np.unique(labels.labels)) | {0}
        for seed in range(25):
            pair = generate_training_pair(labels, sampler, config, seed=seed)
            assert set(np.unique(pair.target.labels)) <= in_set
            pair.provenance.validate_against(config)

    def test_zeroed_augmentations_render_fine_labels(self, rng):
        ct, labels = demo_subject(rng, shape=(16, 16, 16))
        config = zeroed_config()
        sampler = ClusterSampler(ct, labels, config.clustering)
        pair = generate_training_pair(labels, sampler, config, seed=2)
        # Target equals the crop/pad of the input.
        expected_target = center_crop_pad(labels, config.target_shape)
        assert np.array_equal(pair.target.labels, expected_target.labels)
        # With sigma = 0 the image is constant within every fine region:
        # rebuild the fine map the same way and compare region-wise.
        drawn = pair.provenance.cluster_counts
        fine0, _ = sampler.fine_partition(drawn)
        fine = center_crop_pad(fine0, config.target_shape)
        img = pair.image.values
        for fid in np.unique(fine.labels):
            region = img[fine.labels == fid]
            assert np.allclose(region, region.flat[0], atol=1e-6)

    def test_spacing_mismatch_is_resampled_to_target(self, rng):
        ct, labels = demo_subject(rng, shape=(20, 20, 20), spacing=(1.0, 1.0, 1.0))
        config = small_config()
        pair = generate_training_pair(labels, (ct, labels), config, seed=1)
        assert np.allclose(pair.image.geometry.spacing, (1.5, 1.5, 1.5))

    def test_provenance_serializes_to_json(self, rng):
        import json

        ct, labels = demo_subject(rng)
        config = small_config()
        pair = generate_training_pair(labels, (ct, labels), config, seed=3)
        payload = json.dumps(pair.provenance.to_json_dict())
        assert "cluster_counts" in payload
