"""
Pre- and post-processing of volumes: normalization, resampling onto the
network grid and back, rigid augmentation, thresholding and defacing.

All resampling uses corner-aligned grids: the first and last voxel centres of
input and output coincide on every axis.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy import ndimage
from scipy.spatial.transform import Rotation

from apps.core.exceptions import DimensionError, EmptyInputError
from apps.core.parallel import ordered_map
from apps.metrics import services as metrics_service
from apps.volumes.volume import DIM_AXES, GridRecipe, MaskVolume, RigidAugmentation, Volume

logger = logging.getLogger(__name__)

GRID_MULTIPLE = 16


def normalize_intensity(volume: Volume) -> Volume:
    """Map intensities affinely onto [0, 1]; constant volumes become zeros."""
    data = volume.data.astype(np.float64)
    low, high = data.min(), data.max()
    if high == low:
        normalized = np.zeros(volume.dims, dtype=np.float32)
    else:
        normalized = ((data - low) / (high - low)).astype(np.float32)
    return volume.with_data(normalized)


def _check_dims(target_dims):
    target = tuple(int(extent) for extent in target_dims)
    if len(target) != 3:
        raise DimensionError(f"Target dims must have three entries, got {target_dims}", axis="rank")
    for axis, extent in zip(DIM_AXES, target):
        if extent < 1:
            raise DimensionError(f"Target {axis} must be at least 1, got {extent}", axis=axis)
    return target


def _rescaled_geometry(volume: Volume, target):
    ratios = []
    for source, extent in zip(volume.dims, target):
        if source > 1 and extent > 1:
            ratios.append((source - 1) / (extent - 1))
        else:
            ratios.append(source / extent)
    spacing = tuple(s * r for s, r in zip(volume.spacing, ratios))
    affine = volume.affine.copy()
    affine[:3, :3] = affine[:3, :3] * np.array(ratios)
    return spacing, affine


def _zoom(data, target, order):
    factors = [t / s for t, s in zip(target, data.shape)]
    zoomed = ndimage.zoom(data, factors, order=order, mode="nearest", grid_mode=False, prefilter=False)
    if zoomed.shape != tuple(target):
        # Rounding inside zoom can miss by one voxel for awkward ratios.
        raise DimensionError(f"Resampling produced {zoomed.shape}, expected {target}", axis="rank")
    return zoomed


def resample_trilinear(volume: Volume, target_dims) -> Volume:
    target = _check_dims(target_dims)
    if target == volume.dims:
        return volume.with_data(volume.data.copy(), datatype=volume.datatype)
    data = _zoom(volume.data.astype(np.float64), target, order=1).astype(np.float32)
    spacing, affine = _rescaled_geometry(volume, target)
    return Volume(data=data, spacing=spacing, affine=affine)


def resample_mask(mask: MaskVolume, target_dims) -> MaskVolume:
    """Trilinear interpolation of the mask followed by a 0.5 threshold."""
    target = _check_dims(target_dims)
    if target == mask.dims:
        return MaskVolume(mask.data.copy(), spacing=mask.spacing, affine=mask.affine)
    smooth = resample_trilinear(Volume(mask.data.astype(np.float32), spacing=mask.spacing, affine=mask.affine), target)
    return MaskVolume(smooth.data >= 0.5, spacing=smooth.spacing, affine=smooth.affine)


def grid_dims(dims, *, shrink, floor):
    """Network grid for ``dims``: shrunk, floored at ``min(dim, floor)`` and rounded to multiples of 16."""
    if not 0 < shrink <= 1:
        raise ValidationError({"shrink": f"Shrink factor must be in (0, 1], got {shrink}"})
    grid = []
    for extent in dims:
        lower = min(extent, floor)
        wanted = max(extent * shrink, lower)
        size = GRID_MULTIPLE * math.floor(wanted / GRID_MULTIPLE + 0.5)
        while size < lower:
            size += GRID_MULTIPLE
        grid.append(max(size, GRID_MULTIPLE))
    return tuple(grid)


def fit_to_grid(volume: Volume, *, shrink=None, floor=None):
    """Resample onto the inference grid; returns the grid volume and its restore recipe."""
    shrink = settings.DEFACE["SHRINK"] if shrink is None else shrink
    floor = settings.DEFACE["GRID_FLOOR"] if floor is None else floor
    target = grid_dims(volume.dims, shrink=shrink, floor=floor)
    recipe = GridRecipe(
        original_dims=volume.dims,
        grid_dims=target,
        original_spacing=volume.spacing,
        original_affine=volume.affine,
        shrink=shrink,
    )
    logger.debug("fit_to_grid %s -> %s (shrink %.3g)", volume.dims, target, shrink)
    return resample_trilinear(volume, target), recipe


def restore(volume: Volume, recipe: GridRecipe) -> Volume:
    """Bring a grid-space volume (usually probabilities) back to the original geometry."""
    if volume.dims != tuple(recipe.grid_dims):
        raise DimensionError(f"Volume dims {volume.dims} do not match the recipe grid {recipe.grid_dims}", axis="rank")
    restored = resample_trilinear(volume, recipe.original_dims)
    return Volume(data=restored.data, spacing=recipe.original_spacing, affine=recipe.original_affine)


def _inverse_map(dims, augmentation: RigidAugmentation):
    rotation = Rotation.from_euler("xyz", augmentation.rotation_deg, degrees=True).as_matrix()
    # Output voxel o samples input voxel M (o - c) + c.
    matrix = rotation.T / augmentation.scale
    centre = (np.array(dims, dtype=np.float64) - 1.0) / 2.0
    return matrix, centre - matrix @ centre


def augment(volume: Volume, mask: MaskVolume, augmentation: RigidAugmentation):
    """Apply one rigid rotation and isotropic scaling about the volume centre to image and mask."""
    if volume.dims != mask.dims:
        raise DimensionError(f"Image {volume.dims} and mask {mask.dims} are not aligned", axis="rank")
    if augmentation.is_identity:
        return volume.with_data(volume.data.copy(), datatype=volume.datatype), MaskVolume.like(mask, mask.data.copy())
    matrix, offset = _inverse_map(volume.dims, augmentation)
    image = ndimage.affine_transform(
        volume.data.astype(np.float64), matrix, offset=offset, order=1, mode="constant", cval=0.0
    ).astype(np.float32)
    labels = ndimage.affine_transform(mask.data, matrix, offset=offset, order=0, mode="constant", cval=1)
    return volume.with_data(image), MaskVolume.like(mask, labels)


def threshold_mask(probabilities: Volume, tau=None) -> MaskVolume:
    tau = settings.DEFACE["THRESHOLD"] if tau is None else tau
    data = probabilities.data
    if not np.isfinite(data).all() or data.min() < 0 or data.max() > 1:
        raise ValidationError({"probabilities": "Probabilities must lie in [0, 1]"})
    return MaskVolume(data >= tau, spacing=probabilities.spacing, affine=probabilities.affine)


def deface(image: Volume, mask: MaskVolume) -> Volume:
    """Hadamard product of image and binary mask; kept voxels are copied bit-for-bit."""
    if image.dims != mask.dims:
        raise DimensionError(f"Image {image.dims} and mask {mask.dims} differ", axis="rank")
    data = np.where(mask.data == 1, image.data, np.zeros((), dtype=image.data.dtype))
    return image.with_data(data, datatype=image.datatype)


def log_linear_grid(num=7, low=1e-3):
    """Candidate thresholds: log-spaced in [low, 1) merged with 0.1 .. 0.9."""
    if not 0 < low < 1:
        raise ValidationError({"low": "The lowest threshold must be in (0, 1)"})
    logarithmic = np.logspace(math.log10(low), 0.0, num=num, endpoint=False)
    linear = np.linspace(0.1, 0.9, 9)
    merged = {round(float(value), 6) for value in np.concatenate([logarithmic, linear, [0.5]])}
    return sorted(merged)


@dataclass
class ThresholdSearchResult:
    best_tau: float
    best_dice: float
    table: dict = field(default_factory=dict)

    def to_records(self):
        return [{"tau": tau, "dice": dice} for tau, dice in sorted(self.table.items())]


def threshold_search(predict, samples, *, grid=None, threads=None) -> ThresholdSearchResult:
    """Mean Dice of every candidate threshold over ``samples``.

    ``samples`` are (image, truth mask) pairs; ``predict(image)`` returns a
    probability volume on the image's grid. Ties go to the threshold closest
    to 0.5.
    """
    samples = list(samples)
    if not samples:
        raise EmptyInputError("Threshold search needs a non-empty validation set", field="samples")
    grid = log_linear_grid() if grid is None else sorted(grid)
    probabilities = ordered_map(lambda sample: predict(sample[0]), samples, threads=threads)

    table = {}
    for tau in grid:
        scores = [
            metrics_service.dice(threshold_mask(probability, tau), truth)
            for probability, (_, truth) in zip(probabilities, samples)
        ]
        table[tau] = math.fsum(scores) / len(scores)

    best_tau = min(table, key=lambda tau: (-table[tau], abs(tau - 0.5), tau))
    logger.info("threshold search over %d candidates: best tau %.4g (dice %.4f)", len(grid), best_tau, table[best_tau])
    return ThresholdSearchResult(best_tau=best_tau, best_dice=table[best_tau], table=table)
