"""
Wall-clock benchmark of the whole defacing pipeline, file to file.
"""

import logging
import shlex
import statistics
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import psutil
from django.conf import settings
from django.core.exceptions import ValidationError

from apps.nifti.services import inspect_header, write_nifti
from apps.phantoms.services import PhantomSpec, generate_phantom
from apps.pipeline.services import LoadedModel, deface_file
from apps.unet.services import multiply_adds

logger = logging.getLogger(__name__)

MIN_REPS = 3


def parse_dims(text) -> tuple:
    try:
        dims = tuple(int(part) for part in str(text).lower().split("x"))
    except ValueError:
        raise ValidationError({"dims": f"Dims must look like DxHxW, got {text!r}"}) from None
    if len(dims) != 3 or min(dims) < 1:
        raise ValidationError({"dims": f"Dims must be three positive extents, got {text!r}"})
    return dims


@dataclass
class BenchRow:
    label: str
    threads: int
    dims: str
    reps: int
    samples_ms: list = field(default_factory=list)
    images: int = 1
    device: str = "cpu"
    physical_cores: int | None = None
    rss_mb: float | None = None
    gmacs: float | None = None

    @property
    def mean_ms(self):
        return statistics.fmean(self.samples_ms)

    @property
    def median_ms(self):
        return statistics.median(self.samples_ms)

    @property
    def stddev_ms(self):
        return statistics.stdev(self.samples_ms) if len(self.samples_ms) > 1 else 0.0

    def to_record(self):
        return {
            "label": self.label,
            "device": self.device,
            "threads": self.threads,
            "dims": self.dims,
            "images": self.images,
            "reps": self.reps,
            "samples_ms": list(self.samples_ms),
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "stddev_ms": self.stddev_ms,
            "physical_cores": self.physical_cores,
            "rss_mb": self.rss_mb,
            "gmacs": self.gmacs,
        }


@dataclass
class BenchResult:
    rows: list = field(default_factory=list)

    def speedup(self, faster, slower, *, threads=None):
        """mean(slower) / mean(faster) for rows matching the labels (and thread count)."""

        def pick(label):
            for row in self.rows:
                if row.label == label and (threads is None or row.threads == threads):
                    return row
            raise ValidationError({"label": f"No bench row labelled {label!r}"})

        return pick(slower).mean_ms / pick(faster).mean_ms

    def records(self):
        return [row.to_record() for row in self.rows]

    def format_table(self):
        header = f"{'label':<16}{'device':<8}{'threads':>8}{'dims':>14}{'reps':>6}{'mean ms':>12}{'median ms':>12}{'stddev':>10}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            lines.append(
                f"{row.label:<16}{row.device:<8}{row.threads:>8}{row.dims:>14}{row.reps:>6}"
                f"{row.mean_ms:>12.1f}{row.median_ms:>12.1f}{row.stddev_ms:>10.1f}"
            )
        return "\n".join(lines)


def bench_inputs(directory, *, dims=None, rows=None) -> list:
    """Files to time: the rows of a split, or one phantom of ``dims`` written to ``directory``."""
    if rows is not None:
        return [Path(row.image) for row in rows]
    spec = PhantomSpec(dims=parse_dims(dims))
    image, _ = generate_phantom(spec)
    return [write_nifti(image, Path(directory) / "bench_input.nii", datatype="float32")]


def _system_columns():
    process = psutil.Process()
    return psutil.cpu_count(logical=False), process.memory_info().rss / (1024 * 1024)


def time_model(model: LoadedModel, inputs, out_dir, *, reps, threads, warmup=None, label=None, **options) -> BenchRow:
    """Per-image pipeline time, averaged over ``inputs``, ``reps`` times after warm-up."""
    if reps < MIN_REPS:
        raise ValidationError({"reps": f"At least {MIN_REPS} repetitions are required, got {reps}"})
    warmup = settings.DEFACE["BENCH_WARMUP"] if warmup is None else warmup
    out_dir = Path(out_dir)

    grids = {}

    def one_pass():
        started = time.perf_counter()
        for index, path in enumerate(inputs):
            result = deface_file(model, path, out_dir / f"{label or model.variant}_{index}.nii", threads=threads, **options)
            grids[index] = result.grid_dims
        return (time.perf_counter() - started) * 1000.0 / len(inputs)

    for _ in range(warmup):
        one_pass()
    samples = [one_pass() for _ in range(reps)]
    cores, rss = _system_columns()
    row = BenchRow(
        label=label or model.variant,
        threads=threads,
        dims=_dims_label(inputs),
        reps=reps,
        samples_ms=samples,
        images=len(inputs),
        physical_cores=cores,
        rss_mb=rss,
        gmacs=sum(multiply_adds(model.config, grid) for grid in grids.values()) / len(inputs) / 1e9,
    )
    logger.info("bench %s threads=%d: mean %.1f ms over %d reps", row.label, threads, row.mean_ms, reps)
    return row


def time_external(command, inputs, out_dir, *, reps, warmup=None) -> BenchRow:
    """Time an external defacer; ``command`` may use ``{input}`` and ``{output}`` placeholders."""
    if reps < MIN_REPS:
        raise ValidationError({"reps": f"At least {MIN_REPS} repetitions are required, got {reps}"})
    warmup = settings.DEFACE["BENCH_WARMUP"] if warmup is None else warmup
    out_dir = Path(out_dir)

    def one_pass():
        started = time.perf_counter()
        for index, path in enumerate(inputs):
            argv = [
                part.format(input=str(path), output=str(out_dir / f"external_{index}.nii"))
                for part in shlex.split(command)
            ]
            subprocess.run(argv, check=True, capture_output=True)
        return (time.perf_counter() - started) * 1000.0 / len(inputs)

    for _ in range(warmup):
        one_pass()
    samples = [one_pass() for _ in range(reps)]
    cores, rss = _system_columns()
    return BenchRow(
        label="external",
        threads=1,
        dims=_dims_label(inputs),
        reps=reps,
        samples_ms=samples,
        images=len(inputs),
        physical_cores=cores,
        rss_mb=rss,
    )


def _dims_label(inputs):
    shapes = {tuple(inspect_header(path).dims) for path in inputs}
    if len(shapes) == 1:
        return "x".join(str(d) for d in shapes.pop())
    return "mixed"


def run_bench(models: dict, *, dims=None, rows=None, reps=5, threads=(1,), warmup=None, external=None, **options):
    """Bench every (model, thread count) pair on the same inputs, plus an optional external command."""
    with tempfile.TemporaryDirectory(prefix="deface-bench-") as scratch:
        inputs = bench_inputs(scratch, dims=dims, rows=rows)
        result = BenchResult()
        for threads_count in threads:
            for label, model in models.items():
                result.rows.append(
                    time_model(
                        model, inputs, scratch, reps=reps, threads=threads_count, warmup=warmup, label=label, **options
                    )
                )
        if external:
            result.rows.append(time_external(external, inputs, scratch, reps=reps, warmup=warmup))
    return result
