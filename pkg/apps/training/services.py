"""
The training loop: batch size 1, Adam, per-iteration augmentation, periodic
validation and checkpoints.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.conf import settings

from apps.core.exceptions import EmptyInputError, NumericalAbort
from apps.core.parallel import use_threads
from apps.core.records import NullRecordWriter, RecordWriter
from apps.metrics import services as metrics_service
from apps.nifti.weights_format import save_weights
from apps.tensors.tape import Tape
from apps.tensors.tensor import Tensor5
from apps.training.data import AugmentationConfig, iteration_stream
from apps.training.losses import LossBatch, bce_loss, cross_entropy_loss
from apps.training.optim import AdamConfig, AdamState, adam_step
from apps.unet.config import ModelConfig
from apps.unet.inference import predict_mask
from apps.unet.services import forward
from apps.unet.weights import WeightStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingOptions:
    iterations: int
    seed: int = 0
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    checkpoint_every: int = 50
    validate_every: int = 50
    log_every: int = 10
    workers: int = 1

    @classmethod
    def from_settings(cls, *, iterations, seed=None, augmentation=None, workers=None):
        defaults = settings.DEFACE
        return cls(
            iterations=iterations,
            seed=defaults["SEED"] if seed is None else seed,
            augmentation=augmentation or AugmentationConfig.from_settings(),
            checkpoint_every=defaults["CHECKPOINT_EVERY"],
            validate_every=defaults["VALIDATE_EVERY"],
            log_every=defaults["LOG_EVERY"],
            workers=defaults["THREADS"] if workers is None else workers,
        )


@dataclass
class TrainingReport:
    iterations: int = 0
    losses: list = field(default_factory=list)
    validations: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    best_checkpoint: str | None = None
    best_iteration: int | None = None
    best_dice: float | None = None
    seconds: float = 0.0

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else None

    def smoothed_losses(self, window=20):
        if len(self.losses) < window:
            return list(self.losses)
        kernel = np.ones(window) / window
        return [float(value) for value in np.convolve(self.losses, kernel, mode="valid")]

    def summary_record(self):
        return {
            "kind": "summary",
            "iterations": self.iterations,
            "final_loss": self.final_loss,
            "best_checkpoint": self.best_checkpoint,
            "best_iteration": self.best_iteration,
            "best_dice": self.best_dice,
            "checkpoints": list(self.checkpoints),
        }


def training_loss(config: ModelConfig, output: Tensor5, mask):
    """Loss and upstream gradient for one forward output against a grid-space mask."""
    targets = mask.data[np.newaxis, np.newaxis]
    if config.output_channels == 1:
        return bce_loss(LossBatch(output.data, targets))
    return cross_entropy_loss(output.data, targets)


def validate(store: WeightStore, config: ModelConfig, samples) -> dict:
    rows = []
    for sample in samples:
        predicted = predict_mask(store, config, sample.image)
        rows.append(metrics_service.score(predicted, sample.mask))
    return {key: math.fsum(row[key] for row in rows) / len(rows) for key in metrics_service.METRIC_KEYS}


def train_loop(
    store: WeightStore,
    config: ModelConfig,
    samples,
    options: TrainingOptions,
    *,
    adam: AdamConfig | None = None,
    validation=(),
    checkpoint_dir=None,
    metrics_path=None,
) -> TrainingReport:
    """Train ``store`` in place; returns the loss curve and checkpoint bookkeeping.

    Metrics records carry no wall-clock values, so same-seed runs write
    identical files; timings go to the ``.timing.jsonl`` sidecar.
    """
    samples = list(samples)
    validation = list(validation)
    report = TrainingReport()
    if options.iterations <= 0:
        logger.info("no iterations requested; model left unchanged")
        return report
    if not samples:
        raise EmptyInputError("The training set is empty", field="dataset")

    adam = adam or AdamConfig.from_settings()
    state = AdamState()
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
    metrics = RecordWriter(metrics_path) if metrics_path else NullRecordWriter()
    timings = RecordWriter(Path(metrics_path).with_suffix(".timing.jsonl")) if metrics_path else NullRecordWriter()
    started = time.perf_counter()

    logger.info(
        "training %s for %d iterations on %d samples (seed %d, lr %g)",
        config.variant,
        options.iterations,
        len(samples),
        options.seed,
        adam.learning_rate,
    )
    stream = iteration_stream(
        samples,
        options.iterations,
        seed=options.seed,
        augmentation=options.augmentation,
        workers=options.workers,
    )
    with metrics, timings, use_threads(options.workers):
        for index, sample, image, mask, aug in stream:
            iteration = index + 1
            tick = time.perf_counter()
            tape = Tape()
            output = forward(store, config, Tensor5.from_volume(image.data), mode="train", tape=tape)
            loss, grad = training_loss(config, output, mask)
            if not math.isfinite(loss):
                abort = NumericalAbort(iteration=iteration, loss=loss, layer_norms=store.norms())
                logger.error("%s", abort)
                raise abort
            grads = tape.backward(output, upstream=grad.astype(output.dtype))
            adam_step(store, {name: grads[name] for name in store.trainable_names if name in grads}, adam, state)

            report.losses.append(loss)
            report.iterations = iteration
            metrics.write(
                {"kind": "iteration", "iteration": iteration, "sample": sample.id, "loss": loss, **aug.to_record()}
            )
            timings.write({"iteration": iteration, "ms": (time.perf_counter() - tick) * 1000.0})
            logger.debug("iteration %d loss %.6f", iteration, loss)
            if iteration % options.log_every == 0:
                logger.info("iteration %d/%d loss %.5f", iteration, options.iterations, loss)

            if checkpoint_dir and iteration % options.checkpoint_every == 0:
                path = save_weights(store, checkpoint_dir / f"iter_{iteration:06d}.vdfw")
                report.checkpoints.append(path.name)

            last = iteration == options.iterations
            if validation and (iteration % options.validate_every == 0 or last):
                scores = validate(store, config, validation)
                metrics.write({"kind": "validation", "iteration": iteration, **scores})
                report.validations.append({"iteration": iteration, **scores})
                logger.info("validation at %d: dice %.4f", iteration, scores["dice"])
                if report.best_dice is None or scores["dice"] > report.best_dice:
                    report.best_dice = scores["dice"]
                    report.best_iteration = iteration
                    if checkpoint_dir:
                        report.best_checkpoint = save_weights(store, checkpoint_dir / "best.vdfw").name

        report.seconds = time.perf_counter() - started
        metrics.write(report.summary_record())
    logger.info("training finished after %d iterations, final loss %.5f", report.iterations, report.final_loss)
    return report
