"""
Central-difference gradient checks for the tensor ops.
"""

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from apps.core.exceptions import GradCheckError
from apps.tensors.tape import Tape
from apps.tensors.tensor import Tensor5

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    tolerance: float
    step: float
    points: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.points > 0 and self.max_relative_error < self.tolerance


def _evaluate(fn, x) -> float:
    value = np.asarray(fn(x), dtype=np.float64)
    if value.size != 1:
        raise GradCheckError(f"Objective must be scalar, got shape {value.shape}")
    value = float(value.reshape(()))
    if not np.isfinite(value):
        raise GradCheckError(f"Objective returned non-finite value {value}")
    return value


def grad_check(
    fn, x, *, grad, step=1e-3, tolerance=1e-3, max_points=None, seed=0, pattern=None
) -> GradCheckReport:
    """Compare ``grad`` (analytic, or a callable producing it) with central differences of ``fn`` at ``x``.

    Runs in float64. ``max_points`` limits the check to a seeded random subset
    of coordinates for large inputs. The error is
    max|a - n| / max(max|a|, max|n|, 1e-12).

    ``pattern(x)`` optionally fingerprints the piecewise-linear regime (relu
    signs, pooling winners) at ``x``; coordinates whose +/- step crosses a
    kink are skipped and counted.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    analytic = grad(x.copy()) if callable(grad) else grad
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise GradCheckError(f"Analytic gradient shape {analytic.shape} differs from input {x.shape}")
    if not np.isfinite(analytic).all():
        raise GradCheckError("Analytic gradient contains non-finite values")

    flat_count = x.size
    if max_points is not None and max_points < flat_count:
        points = np.sort(np.random.default_rng(seed).choice(flat_count, size=max_points, replace=False))
    else:
        points = np.arange(flat_count)

    reference = pattern(x) if pattern is not None else None
    checked = []
    numeric = []
    flat = x.reshape(-1)
    for index in points:
        original = flat[index]
        flat[index] = original + step
        upper = _evaluate(fn, x)
        crossed = pattern is not None and pattern(x) != reference
        flat[index] = original - step
        lower = _evaluate(fn, x)
        crossed = crossed or (pattern is not None and pattern(x) != reference)
        flat[index] = original
        if crossed:
            continue
        checked.append(index)
        numeric.append((upper - lower) / (2.0 * step))

    numeric = np.asarray(numeric, dtype=np.float64)
    selected = analytic.reshape(-1)[np.asarray(checked, dtype=np.int64)]
    scale = max(np.abs(selected).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    error = float(np.abs(selected - numeric).max(initial=0.0) / scale)
    report = GradCheckReport(
        max_relative_error=error,
        tolerance=tolerance,
        step=step,
        points=len(checked),
        skipped=len(points) - len(checked),
    )
    logger.debug(
        "grad check over %d points (%d skipped at kinks): max relative error %.3e",
        report.points,
        report.skipped,
        error,
    )
    return report


def tape_pattern(tape: Tape) -> str:
    """Digest of every relu sign mask and max-pool winner recorded on ``tape``."""
    digest = hashlib.sha1()
    for entry in tape.entries:
        if entry.op == "relu":
            digest.update(np.packbits(entry.inputs[0].data > 0).tobytes())
        elif entry.op == "maxpool3d":
            digest.update(entry.saved["argmax"].astype(np.uint8).tobytes())
    return digest.hexdigest()


def tape_objective(forward, direction):
    """Build ``(objective, gradient)`` for ``grad_check`` w.r.t. an op input.

    ``forward(tensor, tape)`` returns a Tensor5; the scalar objective is
    ``sum(output * direction)``.
    """
    direction = np.asarray(direction, dtype=np.float64)

    def objective(x):
        output = forward(Tensor5(np.asarray(x, dtype=np.float64)), None)
        return float((output.data.astype(np.float64) * direction).sum())

    def gradient(x):
        source = Tensor5(np.asarray(x, dtype=np.float64))
        tape = Tape()
        output = forward(source, tape)
        tape.backward(output, upstream=direction.astype(output.dtype))
        if source.grad is None:
            return np.zeros_like(source.data)
        return source.grad

    return objective, gradient


def param_objective(forward, name, direction):
    """Like ``tape_objective`` but differentiates w.r.t. a named parameter.

    ``forward(values, tape)`` receives the parameter array and returns a
    Tensor5; the gradient is read from the tape under ``name``.
    """
    direction = np.asarray(direction, dtype=np.float64)

    def objective(values):
        output = forward(np.asarray(values, dtype=np.float64), None)
        return float((output.data.astype(np.float64) * direction).sum())

    def gradient(values):
        values = np.asarray(values, dtype=np.float64)
        tape = Tape()
        output = forward(values, tape)
        grads = tape.backward(output, upstream=direction.astype(output.dtype))
        return grads.get(name, np.zeros_like(values))

    return objective, gradient
