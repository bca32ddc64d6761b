"""
Phantom corpora and their protocol-disjoint dataset manifests.

Corpus layout: ``images/<id>.nii``, ``masks/<id>.nii``, ``manifest.csv`` and
``phantoms.jsonl`` (the parameters of every generated phantom).
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from apps.core.exceptions import EmptyInputError
from apps.core.parallel import ordered_map
from apps.core.records import write_records
from apps.core.storage import write_atomic
from apps.nifti.services import inspect_header, write_nifti
from apps.phantoms.services import PhantomSpec, generate_phantom

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ("id", "image", "mask", "protocol", "split", "seed")
REQUIRED_COLUMNS = {"id", "image", "mask", "protocol", "split"}
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)

# (spacing mm, field of view) pairs, from 32^3 up to 96x96x64.
BASE_PROTOCOLS = (
    ((1.0, 1.0, 1.0), (32, 32, 32)),
    ((1.2, 0.94, 0.94), (40, 48, 48)),
    ((0.94, 0.94, 1.2), (48, 48, 40)),
    ((1.0, 1.0, 1.2), (48, 48, 48)),
    ((0.9, 0.9, 0.9), (56, 56, 48)),
    ((1.2, 1.2, 1.2), (64, 64, 48)),
    ((1.0, 1.0, 1.0), (64, 64, 64)),
    ((0.94, 0.94, 1.5), (72, 72, 56)),
    ((0.8, 0.8, 1.0), (80, 80, 64)),
    ((0.7, 0.7, 1.0), (96, 96, 64)),
)
POSE_JITTER_DEG = 5.0


def protocol_table(count):
    """``count`` distinct protocols; beyond the base table the spacings are stretched."""
    if count < 1:
        raise ValidationError({"protocols": "At least one protocol is required"})
    table = []
    for index in range(count):
        spacing, dims = BASE_PROTOCOLS[index % len(BASE_PROTOCOLS)]
        stretch = 1.0 + 0.05 * (index // len(BASE_PROTOCOLS))
        table.append((tuple(round(s * stretch, 4) for s in spacing), dims))
    return table


def protocol_id(spacing, dims) -> str:
    return "{}mm_{}".format("x".join(f"{s:g}" for s in spacing), "x".join(str(d) for d in dims))


@dataclass(frozen=True)
class ManifestRow:
    id: str
    image: Path
    mask: Path
    protocol: str
    split: str


@dataclass
class DatasetManifest:
    rows: list = field(default_factory=list)
    seed: int = 0

    def split(self, name) -> list:
        if name not in SPLITS:
            raise ValidationError({"split": f"Unknown split {name!r}; choose one of {', '.join(SPLITS)}"})
        return [row for row in self.rows if row.split == name]

    def protocols(self, split=None) -> set:
        return {row.protocol for row in self.rows if split is None or row.split == split}

    @property
    def protocol_counts(self) -> dict:
        return {name: len(self.protocols(name)) for name in SPLITS}


def split_counts(protocol_count, fractions=DEFAULT_FRACTIONS):
    """Protocols per split: val and test are floored (at least one each), train takes the rest."""
    if protocol_count < 3:
        raise ValidationError(
            {"protocols": f"Protocol-disjoint splits need at least 3 protocols, got {protocol_count}"}
        )
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ValidationError({"fractions": f"Split fractions must be three non-negative values summing to 1, got {fractions}"})
    val = max(1, math.floor(protocol_count * fractions[1] + 1e-9))
    test = max(1, math.floor(protocol_count * fractions[2] + 1e-9))
    train = protocol_count - val - test
    if train < 1:
        raise ValidationError({"fractions": f"Fractions {fractions} leave no training protocol"})
    return train, val, test


def assign_splits(protocols, *, seed, fractions=DEFAULT_FRACTIONS, counts=None) -> dict:
    """Shuffle protocols per seed and map each one to a split; ``counts`` overrides the fractions."""
    protocols = sorted(set(protocols))
    if counts is None:
        counts = split_counts(len(protocols), fractions)
    elif len(counts) != 3 or sum(counts) != len(protocols) or min(counts) < 1:
        raise ValidationError(
            {"counts": f"Split counts {tuple(counts)} must be positive and sum to {len(protocols)} protocols"}
        )
    order = np.random.default_rng(seed).permutation(len(protocols))
    assignment = {}
    cursor = 0
    for name, count in zip(SPLITS, counts):
        for index in order[cursor:cursor + count]:
            assignment[protocols[index]] = name
        cursor += count
    return assignment


def build_manifest(corpus_dir, *, seed=0, fractions=DEFAULT_FRACTIONS, counts=None) -> DatasetManifest:
    """Scan ``images/`` and ``masks/`` and split by voxel protocol read from each header."""
    corpus_dir = Path(corpus_dir)
    images = sorted((corpus_dir / "images").glob("*.nii"))
    if not images:
        raise EmptyInputError(f"No images found under {corpus_dir / 'images'}", field="corpus")
    entries = []
    for image in images:
        mask = corpus_dir / "masks" / image.name
        if not mask.is_file():
            raise ValidationError({"mask": f"Image {image.name} has no mask at {mask}"})
        header = inspect_header(image)
        spacing = tuple(round(float(s), 3) for s in header.spacing)
        entries.append((image.stem, image, mask, protocol_id(spacing, header.dims)))

    assignment = assign_splits([entry[3] for entry in entries], seed=seed, fractions=fractions, counts=counts)
    rows = [
        ManifestRow(id=sample_id, image=image, mask=mask, protocol=protocol, split=assignment[protocol])
        for sample_id, image, mask, protocol in entries
    ]
    manifest = DatasetManifest(rows=rows, seed=seed)
    logger.info("manifest over %d images: protocols per split %s", len(rows), manifest.protocol_counts)
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    buffer = io.StringIO(newline="")
    writer = csv.DictWriter(buffer, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in manifest.rows:
        writer.writerow(
            {
                "id": row.id,
                "image": _relative(row.image, path.parent),
                "mask": _relative(row.mask, path.parent),
                "protocol": row.protocol,
                "split": row.split,
                "seed": manifest.seed,
            }
        )
    return write_atomic(path, buffer.getvalue().encode("utf-8"))


def _relative(target, base) -> str:
    target = Path(target)
    try:
        return target.resolve().relative_to(Path(base).resolve()).as_posix()
    except ValueError:
        return target.as_posix()


def _norm(value) -> str:
    if value is None:
        return ""
    return str(value).strip()


def read_manifest(path) -> DatasetManifest:
    """Parse ``manifest.csv``; relative paths resolve against the manifest's directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with path.open(encoding="utf-8-sig", newline="") as handle:
        reader = csv.DictReader(handle)
        if not reader.fieldnames:
            raise ValidationError({"manifest": f"{path} has no header row"})
        missing = sorted(REQUIRED_COLUMNS - {h.strip().lower() for h in reader.fieldnames if h})
        if missing:
            raise ValidationError({"manifest": f"Missing required columns: {', '.join(missing)}"})

        rows = []
        seed = 0
        for row_num, raw_row in enumerate(reader, start=2):
            row = {str(k).strip().lower(): _norm(v) for k, v in (raw_row or {}).items()}
            if row["split"] not in SPLITS:
                raise ValidationError({"manifest": f"Row {row_num}: unknown split {row['split']!r}"})
            if row.get("seed"):
                seed = int(row["seed"])
            rows.append(
                ManifestRow(
                    id=row["id"],
                    image=path.parent / row["image"],
                    mask=path.parent / row["mask"],
                    protocol=row["protocol"],
                    split=row["split"],
                )
            )
    return DatasetManifest(rows=rows, seed=seed)


def corpus_specs(count, protocols, *, seed=0) -> list:
    """Per-phantom specs; each phantom's randomness comes from (seed, index) alone."""
    if count < 1:
        raise ValidationError({"count": "At least one phantom is required"})
    if count < protocols:
        raise ValidationError({"count": f"{count} phantoms cannot cover {protocols} protocols"})
    table = protocol_table(protocols)
    specs = []
    for index in range(count):
        spacing, dims = table[index % protocols]
        rng = np.random.default_rng([seed, index])
        pose = tuple(round(float(angle), 3) for angle in rng.uniform(-POSE_JITTER_DEG, POSE_JITTER_DEG, size=3))
        shrink = float(rng.uniform(0.92, 1.0))
        base = PhantomSpec()
        specs.append(
            replace(
                base,
                dims=dims,
                spacing=spacing,
                head_radii=tuple(round(r * shrink, 4) for r in base.head_radii),
                pose_deg=pose,
                seed=int(rng.integers(0, 2**31 - 1)),
            )
        )
    return specs


def make_corpus(out_dir, *, count=60, protocols=10, seed=0, threads=None, fractions=DEFAULT_FRACTIONS, counts=None):
    """Generate phantoms with oracle masks and write the corpus and its manifest."""
    if protocols < 3:
        split_counts(protocols, fractions)
    out_dir = Path(out_dir)
    specs = corpus_specs(count, protocols, seed=seed)
    ids = [f"ph{index:04d}" for index in range(count)]
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    def write(item):
        sample_id, spec = item
        image, mask = generate_phantom(spec)
        write_nifti(image, out_dir / "images" / f"{sample_id}.nii", datatype="float32")
        write_nifti(mask, out_dir / "masks" / f"{sample_id}.nii", datatype="uint8")
        return {"id": sample_id, "defaced_fraction": mask.defaced_fraction(), **spec.to_record()}

    records = ordered_map(write, list(zip(ids, specs)), threads=threads)
    write_records(out_dir / "phantoms.jsonl", records)
    manifest = build_manifest(out_dir, seed=seed, fractions=fractions, counts=counts)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info("wrote %d phantoms across %d protocols to %s", count, protocols, out_dir)
    return manifest
