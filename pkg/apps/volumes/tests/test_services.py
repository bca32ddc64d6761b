import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy import ndimage

from apps.core.exceptions import DimensionError, EmptyInputError
from apps.volumes import services as volume_service
from apps.volumes.volume import MaskVolume, RigidAugmentation, Volume


def _blob(dims=(32, 32, 32), sigma=6.0):
    grid = np.indices(dims).astype(np.float64)
    centre = (np.array(dims) - 1) / 2.0
    squared = sum((grid[axis] - centre[axis]) ** 2 for axis in range(3))
    return Volume(np.exp(-squared / (2 * sigma ** 2)).astype(np.float32))


class VolumeTypeTests(SimpleTestCase):
    def test_identity_affine_orientation(self):
        self.assertEqual(Volume(np.zeros((2, 2, 2))).orientation, ("R", "A", "S"))

    def test_flipped_axis_orientation(self):
        affine = np.diag([-1.0, 1.0, 1.0, 1.0])
        self.assertEqual(Volume(np.zeros((2, 2, 2)), affine=affine).orientation, ("L", "A", "S"))

    def test_non_positive_spacing_rejected(self):
        with self.assertRaises(ValidationError):
            Volume(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))

    def test_mask_must_be_binary(self):
        with self.assertRaises(ValidationError):
            MaskVolume(np.full((2, 2, 2), 0.5))

    def test_augmentation_sampling_is_reproducible(self):
        first = RigidAugmentation.sample(7)
        self.assertEqual(first, RigidAugmentation.sample(7))
        self.assertTrue(all(-10 <= angle <= 10 for angle in first.rotation_deg))
        self.assertTrue(0.9 <= first.scale <= 1.1)
        self.assertEqual(first.to_record()["seed"], 7)


class NormalizeIntensityTests(SimpleTestCase):
    def test_range_maps_to_unit_interval(self):
        data = np.random.default_rng(0).integers(0, 4001, size=(6, 6, 6)).astype(np.float32)
        data[0, 0, 0], data[-1, -1, -1] = 0, 4000

        out = volume_service.normalize_intensity(Volume(data)).data

        self.assertEqual(out.min(), 0.0)
        self.assertEqual(out.max(), 1.0)
        order = np.argsort(data, axis=None, kind="stable")
        self.assertTrue(np.all(np.diff(out.ravel()[order]) >= 0))

    def test_constant_volume_becomes_zeros(self):
        out = volume_service.normalize_intensity(Volume(np.full((3, 3, 3), 7.0)))
        self.assertFalse(out.data.any())

    def test_normalized_input_is_unchanged(self):
        data = np.random.default_rng(1).random((5, 5, 5)).astype(np.float32)
        data[0, 0, 0], data[1, 1, 1] = 0.0, 1.0
        out = volume_service.normalize_intensity(Volume(data))
        np.testing.assert_allclose(out.data, data, atol=1e-7)


class ResampleTests(SimpleTestCase):
    def test_constant_stays_constant(self):
        out = volume_service.resample_trilinear(Volume(np.full((5, 7, 3), 0.25, dtype=np.float32)), (9, 4, 11))
        self.assertEqual(out.dims, (9, 4, 11))
        np.testing.assert_allclose(out.data, 0.25, rtol=0, atol=1e-7)

    def test_linear_ramp_stays_linear(self):
        ramp = np.broadcast_to(np.arange(16, dtype=np.float64) / 15.0, (4, 4, 16)).astype(np.float32)
        out = volume_service.resample_trilinear(Volume(ramp), (4, 4, 32))
        expected = np.arange(32) / 31.0
        np.testing.assert_allclose(out.data[2, 1], expected, atol=1e-6)

    def test_identity_target_is_bit_equal(self):
        data = np.random.default_rng(2).normal(size=(4, 5, 6)).astype(np.float32)
        out = volume_service.resample_trilinear(Volume(data), (4, 5, 6))
        self.assertEqual(out.data.tobytes(), data.tobytes())

    def test_no_overshoot(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            data = rng.normal(size=tuple(rng.integers(2, 9, size=3))).astype(np.float32)
            target = tuple(int(x) for x in rng.integers(1, 13, size=3))
            out = volume_service.resample_trilinear(Volume(data), target)
            self.assertGreaterEqual(out.data.min(), data.min())
            self.assertLessEqual(out.data.max(), data.max())

    def test_physical_extent_preserved(self):
        volume = Volume(np.zeros((9, 5, 3), dtype=np.float32), spacing=(1.0, 2.0, 3.0))
        out = volume_service.resample_trilinear(volume, (17, 3, 5))
        for before, after, spacing_before, spacing_after in zip(volume.dims, out.dims, volume.spacing, out.spacing):
            self.assertAlmostEqual((before - 1) * spacing_before, (after - 1) * spacing_after)

    def test_mask_resample_stays_binary(self):
        mask = MaskVolume((np.random.default_rng(4).random((8, 8, 8)) > 0.3).astype(np.uint8))
        out = volume_service.resample_mask(mask, (16, 4, 12))
        self.assertTrue(np.isin(out.data, (0, 1)).all())
        self.assertEqual(out.dims, (16, 4, 12))

    def test_invalid_target_rejected(self):
        with self.assertRaises(DimensionError):
            volume_service.resample_trilinear(Volume(np.zeros((2, 2, 2))), (2, 0, 2))


class FitToGridTests(SimpleTestCase):
    def test_documented_example(self):
        self.assertEqual(volume_service.grid_dims((256, 256, 150), shrink=0.5, floor=64), (128, 128, 80))

    def test_floor_dims_unchanged(self):
        volume = Volume(np.random.default_rng(0).random((64, 64, 64)).astype(np.float32))
        grid, recipe = volume_service.fit_to_grid(volume, shrink=0.5, floor=64)
        self.assertEqual(grid.dims, (64, 64, 64))
        self.assertTrue(recipe.is_identity)
        self.assertEqual(grid.data.tobytes(), volume.data.tobytes())

    def test_restore_returns_original_geometry(self):
        volume = Volume(np.random.default_rng(1).random((70, 40, 33)).astype(np.float32), spacing=(1.0, 1.2, 0.9))
        grid, recipe = volume_service.fit_to_grid(volume, shrink=0.5, floor=64)
        restored = volume_service.restore(grid, recipe)

        self.assertEqual(restored.dims, volume.dims)
        self.assertEqual(restored.spacing, volume.spacing)
        np.testing.assert_array_equal(restored.affine, volume.affine)

    def test_grid_invariants(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            dims = tuple(int(x) for x in rng.integers(1, 400, size=3))
            shrink = float(rng.uniform(0.1, 1.0))
            for extent, size in zip(dims, volume_service.grid_dims(dims, shrink=shrink, floor=64)):
                self.assertEqual(size % 16, 0)
                self.assertGreaterEqual(size, min(extent, 64))

    def test_invalid_shrink_rejected(self):
        with self.assertRaises(ValidationError):
            volume_service.grid_dims((64, 64, 64), shrink=0.0, floor=64)


class AugmentTests(SimpleTestCase):
    def setUp(self):
        self.image = _blob()
        labels = np.ones(self.image.dims, dtype=np.uint8)
        labels[:, 20:, :12] = 0
        self.mask = MaskVolume(labels)

    def test_identity_transform(self):
        image, mask = volume_service.augment(self.image, self.mask, RigidAugmentation())
        np.testing.assert_allclose(image.data, self.image.data, atol=1e-6)
        np.testing.assert_array_equal(mask.data, self.mask.data)

    def test_mask_stays_binary_under_sampled_transforms(self):
        for seed in range(5):
            _, mask = volume_service.augment(self.image, self.mask, RigidAugmentation.sample(seed))
            self.assertTrue(np.isin(mask.data, (0, 1)).all())

    def test_out_of_field_fill(self):
        shrunk = RigidAugmentation(rotation_deg=(0.0, 0.0, 0.0), scale=0.5)
        image, mask = volume_service.augment(self.image, MaskVolume(np.zeros(self.image.dims, dtype=np.uint8)), shrunk)
        # Scaling down pulls samples from outside the field at the border.
        self.assertEqual(image.data[0, 0, 0], 0.0)
        self.assertEqual(mask.data[0, 0, 0], 1)

    def test_rotation_round_trip_is_close_in_interior(self):
        forward = RigidAugmentation(rotation_deg=(10.0, 0.0, 0.0), scale=1.0)
        backward = RigidAugmentation(rotation_deg=(-10.0, 0.0, 0.0), scale=1.0)
        once, mask = volume_service.augment(self.image, self.mask, forward)
        twice, _ = volume_service.augment(once, mask, backward)

        grid = np.indices(self.image.dims)
        interior = sum((grid[axis] - 15.5) ** 2 for axis in range(3)) <= 10 ** 2
        deviation = np.abs(twice.data - self.image.data)[interior].mean()
        self.assertLess(deviation, 0.02)

    def test_recorded_parameters_reproduce_exactly(self):
        augmentation = RigidAugmentation.sample(3)
        first = volume_service.augment(self.image, self.mask, augmentation)
        second = volume_service.augment(self.image, self.mask, augmentation)
        self.assertEqual(first[0].data.tobytes(), second[0].data.tobytes())
        self.assertEqual(first[1].data.tobytes(), second[1].data.tobytes())


class ThresholdAndDefaceTests(SimpleTestCase):
    def test_tie_goes_to_keep(self):
        probabilities = Volume(np.array([0.49, 0.5, 0.51], dtype=np.float32).reshape(1, 1, 3))
        mask = volume_service.threshold_mask(probabilities, 0.5)
        np.testing.assert_array_equal(mask.data.ravel(), [0, 1, 1])

    def test_high_probabilities_keep_everything(self):
        mask = volume_service.threshold_mask(Volume(np.full((3, 3, 3), 0.9)))
        self.assertTrue(np.all(mask.data == 1))

    def test_kept_fraction_shrinks_with_tau(self):
        probabilities = Volume(np.random.default_rng(0).random((8, 8, 8)))
        fractions = [volume_service.threshold_mask(probabilities, tau).data.mean() for tau in np.linspace(0.1, 0.9, 9)]
        self.assertTrue(all(a >= b for a, b in zip(fractions, fractions[1:])))

    def test_out_of_range_probabilities_rejected(self):
        with self.assertRaises(ValidationError):
            volume_service.threshold_mask(Volume(np.full((2, 2, 2), 1.5)))

    def test_deface_examples(self):
        image = Volume(np.array([2.0, 3.0, 5.0], dtype=np.float32).reshape(1, 1, 3))
        mask = MaskVolume(np.array([1, 0, 1]).reshape(1, 1, 3))
        np.testing.assert_array_equal(volume_service.deface(image, mask).data.ravel(), [2.0, 0.0, 5.0])

        ones = MaskVolume(np.ones((1, 1, 3), dtype=np.uint8))
        self.assertEqual(volume_service.deface(image, ones).data.tobytes(), image.data.tobytes())
        zeros = MaskVolume(np.zeros((1, 1, 3), dtype=np.uint8))
        self.assertFalse(volume_service.deface(image, zeros).data.any())

    def test_deface_dim_mismatch(self):
        with self.assertRaises(DimensionError):
            volume_service.deface(Volume(np.zeros((2, 2, 2))), MaskVolume(np.ones((2, 2, 3), dtype=np.uint8)))

    def test_pipeline_properties_on_random_cases(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            dims = tuple(int(x) for x in rng.integers(1, 6, size=3))
            image = Volume(rng.normal(size=dims).astype(np.float32))
            probabilities = Volume(rng.random(dims).astype(np.float32))
            mask = volume_service.threshold_mask(probabilities, float(rng.random()))

            self.assertTrue(np.isin(mask.data, (0, 1)).all())
            again = volume_service.threshold_mask(Volume(mask.data.astype(np.float32)), 0.5)
            np.testing.assert_array_equal(again.data, mask.data)

            once = volume_service.deface(image, mask)
            twice = volume_service.deface(once, mask)
            self.assertEqual(once.data.tobytes(), twice.data.tobytes())
            kept = mask.data == 1
            self.assertEqual(once.data[kept].tobytes(), image.data[kept].tobytes())
            self.assertFalse(once.data[~kept].any())


class ThresholdSearchTests(SimpleTestCase):
    def _samples(self, count=3):
        rng = np.random.default_rng(0)
        samples = []
        for _ in range(count):
            truth = MaskVolume((rng.random((6, 6, 6)) > 0.2).astype(np.uint8))
            samples.append((Volume(truth.data.astype(np.float32)), truth))
        return samples

    def test_log_linear_grid(self):
        grid = volume_service.log_linear_grid()
        self.assertIn(0.5, grid)
        self.assertEqual(grid, sorted(grid))
        self.assertTrue(all(0 < tau < 1 for tau in grid))
        self.assertIn(0.001, grid)

    def test_exact_predictions_are_threshold_invariant(self):
        result = volume_service.threshold_search(lambda image: image, self._samples())

        self.assertEqual(len(set(result.table.values())), 1)
        self.assertEqual(result.best_tau, 0.5)
        self.assertIn(result.best_tau, volume_service.log_linear_grid())
        self.assertEqual(result.best_dice, 1.0)

    def test_best_tau_is_a_grid_member(self):
        def blurred(image):
            return Volume(np.clip(ndimage.uniform_filter(image.data, 3), 0, 1))

        grid = [0.2, 0.4, 0.6, 0.8]
        result = volume_service.threshold_search(blurred, self._samples(), grid=grid)
        self.assertIn(result.best_tau, grid)
        self.assertEqual([record["tau"] for record in result.to_records()], grid)

    def test_empty_validation_set(self):
        with self.assertRaises(EmptyInputError):
            volume_service.threshold_search(lambda image: image, [])
