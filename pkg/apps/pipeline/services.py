"""
End-to-end defacing: load -> preprocess -> forward -> postprocess -> write.
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings

from apps.core.parallel import use_threads
from apps.nifti.services import read_nifti, write_nifti
from apps.nifti.weights_format import load_weights
from apps.unet.config import ModelConfig
from apps.unet.inference import predict_probabilities
from apps.unet.weights import WeightStore
from apps.volumes.services import deface, fit_to_grid, normalize_intensity, restore, threshold_mask
from apps.volumes.volume import MaskVolume, Volume

logger = logging.getLogger(__name__)

STAGES = ("load", "preprocess", "forward", "postprocess", "write")


@dataclass
class DefaceResult:
    image: Volume
    mask: MaskVolume
    grid_dims: tuple
    shrink: float
    fell_back: bool = False
    timings: dict = field(default_factory=dict)

    @property
    def total_ms(self):
        return sum(self.timings.values())

    def timing_lines(self):
        lines = [f"{stage:<12}{self.timings[stage]:>10.1f} ms" for stage in STAGES if stage in self.timings]
        lines.append(f"{'total':<12}{self.total_ms:>10.1f} ms")
        return lines


@contextmanager
def _stage(timings, name):
    started = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = (time.perf_counter() - started) * 1000.0


@dataclass(frozen=True)
class LoadedModel:
    store: WeightStore
    config: ModelConfig
    path: Path | None = None

    @property
    def variant(self):
        return self.config.variant


def load_model(path) -> LoadedModel:
    """Read a weights file; its tag names the architecture."""
    store = load_weights(path)
    return LoadedModel(store=store, config=ModelConfig.from_tag(store.tag), path=Path(path))


def choose_grid(volume: Volume, *, shrink=None, floor=None, min_grid=None):
    """fit_to_grid, or its no-shrink variant when the shrunk grid would be too small."""
    shrink = settings.DEFACE["SHRINK"] if shrink is None else shrink
    min_grid = settings.DEFACE["MIN_GRID"] if min_grid is None else min_grid
    grid_volume, recipe = fit_to_grid(volume, shrink=shrink, floor=floor)
    if min(recipe.grid_dims) < min_grid and shrink < 1.0:
        logger.warning(
            "grid %s from shrink %.3g is below %d voxels; falling back to no shrink",
            recipe.grid_dims,
            shrink,
            min_grid,
        )
        grid_volume, recipe = fit_to_grid(volume, shrink=1.0, floor=floor)
        return grid_volume, recipe, True
    return grid_volume, recipe, False


def keep_probabilities(model: LoadedModel, image: Volume, *, shrink=None, floor=None, min_grid=None) -> Volume:
    """Keep-probabilities on the image's own grid (before thresholding)."""
    grid_image, recipe, _ = choose_grid(normalize_intensity(image), shrink=shrink, floor=floor, min_grid=min_grid)
    return restore(predict_probabilities(model.store, model.config, grid_image), recipe)


def deface_volume(model: LoadedModel, image: Volume, *, shrink=None, floor=None, tau=None, min_grid=None, threads=None):
    """Predict the defacing mask for ``image`` and apply it; kept voxels are bit-equal to the input."""
    timings = {}
    with _stage(timings, "preprocess"):
        grid_image, recipe, fell_back = choose_grid(
            normalize_intensity(image), shrink=shrink, floor=floor, min_grid=min_grid
        )
    with _stage(timings, "forward"), use_threads(threads or settings.DEFACE["THREADS"]):
        probabilities = predict_probabilities(model.store, model.config, grid_image)
    with _stage(timings, "postprocess"):
        restored = restore(probabilities, recipe)
        # Two-class heads are binarized by argmax.
        tau = 0.5 if model.config.output_channels == 2 else tau
        mask = threshold_mask(restored, tau)
        mask = MaskVolume(mask.data, spacing=image.spacing, affine=image.affine)
        defaced = deface(image, mask)
    return DefaceResult(
        image=defaced,
        mask=mask,
        grid_dims=tuple(recipe.grid_dims),
        shrink=1.0 if fell_back else (settings.DEFACE["SHRINK"] if shrink is None else shrink),
        fell_back=fell_back,
        timings=timings,
    )


def deface_file(model: LoadedModel, in_path, out_path, *, mask_out=None, **options) -> DefaceResult:
    """Deface one NIfTI file; outputs appear atomically or not at all."""
    timings = {}
    with _stage(timings, "load"):
        image = read_nifti(in_path)
    result = deface_volume(model, image, **options)
    with _stage(timings, "write"):
        write_nifti(result.image, out_path, datatype=image.datatype)
        if mask_out:
            write_nifti(result.mask, mask_out, datatype="uint8")
    result.timings = {**timings, **result.timings}
    logger.info(
        "defaced %s -> %s (grid %s, %.1f ms, %.2f%% removed)",
        in_path,
        out_path,
        "x".join(str(d) for d in result.grid_dims),
        result.total_ms,
        100.0 * result.mask.defaced_fraction(),
    )
    return result
