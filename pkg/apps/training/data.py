"""
Training samples: preprocessing onto the network grid and the deterministic
per-iteration stream of augmented samples.
"""

import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from apps.core.exceptions import EmptyInputError
from apps.core.parallel import PrefetchingLoader, ordered_map
from apps.nifti.services import read_mask, read_nifti
from apps.volumes.services import augment, fit_to_grid, normalize_intensity, resample_mask
from apps.volumes.volume import GridRecipe, MaskVolume, RigidAugmentation, Volume

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class TrainingSample:
    id: str
    image: Volume
    mask: MaskVolume
    recipe: GridRecipe
    protocol: str = ""


@dataclass(frozen=True)
class AugmentationConfig:
    enabled: bool = True
    rotation_range: float = 10.0
    scale_range: tuple = (0.9, 1.1)

    @classmethod
    def from_settings(cls, *, enabled=True):
        return cls(
            enabled=enabled,
            rotation_range=settings.DEFACE["ROTATION_RANGE_DEG"],
            scale_range=tuple(settings.DEFACE["SCALE_RANGE"]),
        )

    def draw(self, seed) -> RigidAugmentation:
        if not self.enabled:
            return RigidAugmentation(seed=seed)
        return RigidAugmentation.sample(seed, rotation_range=self.rotation_range, scale_range=self.scale_range)


def prepare_sample(image: Volume, mask: MaskVolume, *, sample_id="", protocol="", shrink=None, floor=None):
    """normalize -> fit_to_grid for the image, trilinear-then-threshold for the mask."""
    grid_image, recipe = fit_to_grid(normalize_intensity(image), shrink=shrink, floor=floor)
    grid_mask = resample_mask(mask, recipe.grid_dims)
    return TrainingSample(id=sample_id, image=grid_image, mask=grid_mask, recipe=recipe, protocol=protocol)


def load_samples(rows, *, shrink=None, floor=None, threads=None) -> list:
    """Read and preprocess manifest rows (``id``, ``image``, ``mask``, ``protocol``) in row order."""

    def load(row):
        return prepare_sample(
            read_nifti(row.image),
            read_mask(row.mask),
            sample_id=row.id,
            protocol=row.protocol,
            shrink=shrink,
            floor=floor,
        )

    samples = ordered_map(load, rows, threads=threads)
    logger.info("prepared %d samples", len(samples))
    return samples


def derive_seed(*entropy) -> int:
    return int(np.random.SeedSequence([int(value) for value in entropy]).generate_state(1)[0])


def sample_order(count, iterations, *, seed) -> list:
    """Sample index for each iteration: a fresh seeded permutation per epoch."""
    if count == 0:
        raise EmptyInputError("The training set is empty", field="dataset")
    order = []
    epoch = 0
    while len(order) < iterations:
        order.extend(int(i) for i in np.random.default_rng(derive_seed(seed, epoch)).permutation(count))
        epoch += 1
    return order[:iterations]


def iteration_stream(samples, iterations, *, seed, augmentation: AugmentationConfig, workers=1, prefetch=None):
    """Yield ``(iteration, sample, image, mask, augmentation)`` in a schedule-independent order."""
    order = sample_order(len(samples), iterations, seed=seed)
    prefetch = settings.DEFACE["PREFETCH"] if prefetch is None else prefetch

    def load(iteration):
        sample = samples[order[iteration]]
        aug = augmentation.draw(derive_seed(seed, 1_000_003, iteration))
        image, mask = augment(sample.image, sample.mask, aug)
        return iteration, sample, image, mask, aug

    return PrefetchingLoader(load, range(iterations), workers=workers, prefetch=prefetch)
