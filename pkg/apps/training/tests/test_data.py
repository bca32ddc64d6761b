import numpy as np
from django.test import SimpleTestCase

from apps.core.exceptions import EmptyInputError
from apps.training.data import AugmentationConfig, derive_seed, iteration_stream, sample_order
from tests.factories import phantom_sample


class SampleOrderTests(SimpleTestCase):
    def test_each_epoch_is_a_permutation(self):
        order = sample_order(5, 12, seed=3)

        self.assertEqual(len(order), 12)
        self.assertEqual(sorted(order[:5]), list(range(5)))
        self.assertEqual(sorted(order[5:10]), list(range(5)))

    def test_seeded(self):
        self.assertEqual(sample_order(7, 30, seed=1), sample_order(7, 30, seed=1))
        self.assertNotEqual(sample_order(7, 30, seed=1), sample_order(7, 30, seed=2))

    def test_empty_dataset(self):
        with self.assertRaises(EmptyInputError):
            sample_order(0, 5, seed=0)

    def test_derived_seeds_differ_by_stream(self):
        self.assertEqual(derive_seed(0, 1, 2), derive_seed(0, 1, 2))
        self.assertNotEqual(derive_seed(0, 1, 2), derive_seed(0, 2, 1))


class PreparedSampleTests(SimpleTestCase):
    def test_phantom_lands_on_sixteen_cubed_grid(self):
        sample = phantom_sample(seed=0)

        self.assertEqual(sample.image.dims, (16, 16, 16))
        self.assertEqual(sample.mask.dims, (16, 16, 16))
        self.assertEqual(tuple(sample.recipe.original_dims), (32, 32, 32))
        self.assertTrue(np.isin(sample.mask.data, (0, 1)).all())
        self.assertLessEqual(float(sample.image.data.max()), 1.0)
        self.assertGreaterEqual(float(sample.image.data.min()), 0.0)


class IterationStreamTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.samples = [phantom_sample(f"s{seed}", seed=seed) for seed in range(3)]

    def _collect(self, workers, augmentation):
        return list(iteration_stream(self.samples, 7, seed=11, augmentation=augmentation, workers=workers, prefetch=2))

    def test_independent_of_worker_count(self):
        augmentation = AugmentationConfig()
        serial = self._collect(1, augmentation)
        parallel = self._collect(3, augmentation)

        self.assertEqual([item[0] for item in parallel], list(range(7)))
        for (_, sample_a, image_a, mask_a, aug_a), (_, sample_b, image_b, mask_b, aug_b) in zip(serial, parallel):
            self.assertEqual(sample_a.id, sample_b.id)
            self.assertEqual(aug_a, aug_b)
            np.testing.assert_array_equal(image_a.data, image_b.data)
            np.testing.assert_array_equal(mask_a.data, mask_b.data)

    def test_disabled_augmentation_is_identity(self):
        for _, sample, image, mask, aug in self._collect(1, AugmentationConfig(enabled=False)):
            self.assertTrue(aug.is_identity)
            np.testing.assert_array_equal(image.data, sample.image.data)
            np.testing.assert_array_equal(mask.data, sample.mask.data)

    def test_augmentation_within_ranges(self):
        for *_, aug in self._collect(1, AugmentationConfig(rotation_range=10.0, scale_range=(0.9, 1.1))):
            self.assertTrue(all(abs(angle) <= 10.0 for angle in aug.rotation_deg))
            self.assertTrue(0.9 <= aug.scale <= 1.1)
