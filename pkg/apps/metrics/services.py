"""
Overlap metrics between binary masks.

The positive class is the defaced voxel (mask value 0): a true positive is a
voxel both masks deface.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.conf import settings

from apps.core.exceptions import DimensionError, EmptyInputError
from apps.core.parallel import ordered_map
from apps.nifti.services import read_mask
from apps.volumes.volume import MaskVolume, Volume

logger = logging.getLogger(__name__)

# Published test-set scores and parameter counts, reported next to measured values.
PUBLISHED_REFERENCE = {
    "deepdefacer": {"dice": 0.854, "precision": 0.916, "recall": 0.805, "parameters": 1_412_197},
    "baseline": {"dice": 0.413, "precision": 0.132, "recall": 0.882, "parameters": 19_069_955},
}

AGGREGATION = "per-image metrics, then unweighted mean over images"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _check_pair(predicted: Volume, truth: Volume):
    if predicted.dims != truth.dims:
        raise DimensionError(f"Mask dims differ: {predicted.dims} vs {truth.dims}", axis="rank")


def confusion(predicted: MaskVolume, truth: MaskVolume) -> ConfusionCounts:
    _check_pair(predicted, truth)
    predicted_positive = predicted.data == 0
    truth_positive = truth.data == 0
    tp = int(np.count_nonzero(predicted_positive & truth_positive))
    fp = int(np.count_nonzero(predicted_positive & ~truth_positive))
    fn = int(np.count_nonzero(~predicted_positive & truth_positive))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=predicted.data.size - tp - fp - fn)


def dice_from_counts(counts: ConfusionCounts) -> float:
    denominator = 2 * counts.tp + counts.fp + counts.fn
    if denominator == 0:
        return 1.0
    return 2 * counts.tp / denominator


def precision_recall_from_counts(counts: ConfusionCounts):
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 1.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 1.0
    return precision, recall


def dice(predicted: MaskVolume, truth: MaskVolume) -> float:
    return dice_from_counts(confusion(predicted, truth))


def precision_recall(predicted: MaskVolume, truth: MaskVolume):
    return precision_recall_from_counts(confusion(predicted, truth))


def binarize_baseline_output(original: Volume, predicted_defaced: Volume, tau_eq=None) -> MaskVolume:
    """Keep voxels the baseline left (nearly) unchanged; everything else counts as defaced.

    Both images go through the original's min/max map onto [0, 1] first, so
    ``tau_eq`` means the same thing for any intensity range.
    """
    tau_eq = settings.DEFACE["BASELINE_TAU_EQ"] if tau_eq is None else tau_eq
    _check_pair(predicted_defaced, original)
    source = original.data.astype(np.float64)
    span = float(source.max() - source.min()) or 1.0
    delta = np.abs(source - predicted_defaced.data.astype(np.float64)) / span
    return MaskVolume(delta <= tau_eq, spacing=original.spacing, affine=original.affine)


def score(predicted: MaskVolume, truth: MaskVolume) -> dict:
    counts = confusion(predicted, truth)
    precision, recall = precision_recall_from_counts(counts)
    return {
        "dice": dice_from_counts(counts),
        "precision": precision,
        "recall": recall,
        "tp": counts.tp,
        "fp": counts.fp,
        "fn": counts.fn,
        "tn": counts.tn,
    }


METRIC_KEYS = ("dice", "precision", "recall")


def _means(rows):
    return {key: math.fsum(row[key] for row in rows) / len(rows) for key in METRIC_KEYS}


@dataclass
class EvaluationReport:
    variant: str
    rows: list
    skipped: list = field(default_factory=list)
    means: dict = field(default_factory=dict)
    per_protocol: dict = field(default_factory=dict)

    @property
    def reference(self):
        return PUBLISHED_REFERENCE.get(self.variant, {})

    def summary_record(self):
        return {
            "kind": "summary",
            "variant": self.variant,
            "aggregation": AGGREGATION,
            "images": len(self.rows),
            "skipped": len(self.skipped),
            **{f"mean_{key}": value for key, value in self.means.items()},
            "reference": self.reference,
        }

    def records(self):
        """Machine-readable records: one per image, one per protocol, then the summary."""
        records = [{"kind": "image", **row} for row in self.rows]
        records += [
            {"kind": "protocol", "protocol": protocol, **means}
            for protocol, means in sorted(self.per_protocol.items())
        ]
        records.append(self.summary_record())
        return records


def evaluate(mask_source, rows, *, variant="deepdefacer", threads=None) -> EvaluationReport:
    """Score ``mask_source(row)`` against each row's ground-truth mask.

    ``rows`` need ``id``, ``protocol`` and ``mask`` (a path). Rows whose
    ground truth is missing are skipped with a warning and counted.
    """
    rows = list(rows)
    if not rows:
        raise EmptyInputError("Nothing to evaluate: the manifest selection is empty", field="manifest")

    usable = []
    skipped = []
    for row in rows:
        if row.mask is None or not Path(row.mask).is_file():
            logger.warning("no ground-truth mask for %s; skipping", row.id)
            skipped.append(row.id)
        else:
            usable.append(row)
    if not usable:
        raise EmptyInputError("No manifest row has a ground-truth mask", field="manifest")

    def score_row(row):
        truth = read_mask(row.mask)
        return {"id": row.id, "protocol": row.protocol, **score(mask_source(row), truth)}

    scored = ordered_map(score_row, usable, threads=threads)

    grouped = defaultdict(list)
    for row in scored:
        grouped[row["protocol"]].append(row)
    report = EvaluationReport(
        variant=variant,
        rows=scored,
        skipped=skipped,
        means=_means(scored),
        per_protocol={protocol: _means(members) for protocol, members in grouped.items()},
    )
    logger.info(
        "evaluated %d images (%d skipped): dice %.4f precision %.4f recall %.4f",
        len(scored),
        len(skipped),
        report.means["dice"],
        report.means["precision"],
        report.means["recall"],
    )
    return report
