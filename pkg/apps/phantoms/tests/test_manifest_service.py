import tempfile
from pathlib import Path

from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from apps.core.exceptions import EmptyInputError
from apps.core.records import read_records
from apps.nifti.services import read_mask, read_nifti
from apps.phantoms.manifest_service import (
    MANIFEST_NAME,
    SPLITS,
    DatasetManifest,
    assign_splits,
    build_manifest,
    corpus_specs,
    make_corpus,
    protocol_id,
    protocol_table,
    read_manifest,
    split_counts,
)


class SplitCountTests(SimpleTestCase):
    def test_default_fractions(self):
        self.assertEqual(split_counts(30), (24, 3, 3))
        self.assertEqual(split_counts(10), (8, 1, 1))
        self.assertEqual(split_counts(3), (1, 1, 1))

    def test_too_few_protocols(self):
        for count in (0, 1, 2):
            with self.subTest(count=count), self.assertRaises(ValidationError):
                split_counts(count)

    def test_bad_fractions(self):
        with self.assertRaises(ValidationError):
            split_counts(10, (0.5, 0.5, 0.5))

    def test_counts_override(self):
        protocols = [f"p{index:02d}" for index in range(30)]
        assignment = assign_splits(protocols, seed=0, counts=(20, 5, 5))

        tally = {name: list(assignment.values()).count(name) for name in SPLITS}
        self.assertEqual(tally, {"train": 20, "val": 5, "test": 5})

    def test_counts_must_cover_every_protocol(self):
        with self.assertRaises(ValidationError):
            assign_splits(["a", "b", "c", "d"], seed=0, counts=(2, 1, 0))
        with self.assertRaises(ValidationError):
            assign_splits(["a", "b", "c", "d"], seed=0, counts=(1, 1, 1))

    def test_assignment_is_seeded(self):
        protocols = [f"p{index}" for index in range(10)]
        self.assertEqual(assign_splits(protocols, seed=4), assign_splits(list(reversed(protocols)), seed=4))
        outcomes = {tuple(sorted(assign_splits(protocols, seed=seed).items())) for seed in range(6)}
        self.assertGreater(len(outcomes), 1)


class ProtocolTableTests(SimpleTestCase):
    def test_identifiers_are_distinct(self):
        table = protocol_table(25)
        self.assertEqual(len({protocol_id(spacing, dims) for spacing, dims in table}), 25)

    def test_identifier_format(self):
        self.assertEqual(protocol_id((1.0, 1.0, 1.0), (32, 32, 32)), "1x1x1mm_32x32x32")
        self.assertEqual(protocol_id((1.2, 0.94, 0.94), (40, 48, 48)), "1.2x0.94x0.94mm_40x48x48")

    def test_corpus_specs(self):
        specs = corpus_specs(6, 3, seed=1)

        self.assertEqual([spec.dims for spec in specs[:3]], [dims for _, dims in protocol_table(3)])
        self.assertEqual(specs, corpus_specs(6, 3, seed=1))
        self.assertNotEqual(specs, corpus_specs(6, 3, seed=2))
        for spec in specs:
            spec.validate()
            self.assertTrue(all(abs(angle) <= 5.0 for angle in spec.pose_deg))

    def test_more_protocols_than_phantoms(self):
        with self.assertRaises(ValidationError):
            corpus_specs(2, 3)


class CorpusTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._tmp = tempfile.TemporaryDirectory()
        cls.tmp = Path(cls._tmp.name)
        cls.manifest = make_corpus(cls.tmp / "a", count=6, protocols=3, seed=3)

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        super().tearDownClass()

    def test_layout(self):
        root = self.tmp / "a"
        self.assertEqual(len(list((root / "images").glob("*.nii"))), 6)
        self.assertEqual(len(list((root / "masks").glob("*.nii"))), 6)
        self.assertTrue((root / MANIFEST_NAME).is_file())
        ids = [record["id"] for record in read_records(root / "phantoms.jsonl")]
        self.assertEqual(ids, [f"ph{index:04d}" for index in range(6)])

    def test_splits_are_protocol_disjoint(self):
        by_split = {name: self.manifest.protocols(name) for name in SPLITS}

        self.assertEqual(self.manifest.protocol_counts, {"train": 1, "val": 1, "test": 1})
        self.assertFalse(by_split["train"] & by_split["val"])
        self.assertFalse(by_split["train"] & by_split["test"])
        self.assertFalse(by_split["val"] & by_split["test"])
        self.assertEqual(sum(len(self.manifest.split(name)) for name in SPLITS), 6)

    def test_files_and_manifest_are_deterministic(self):
        other = self.tmp / "b"
        make_corpus(other, count=6, protocols=3, seed=3)

        for relative in ("manifest.csv", "phantoms.jsonl", "images/ph0002.nii", "masks/ph0005.nii"):
            with self.subTest(file=relative):
                self.assertEqual((self.tmp / "a" / relative).read_bytes(), (other / relative).read_bytes())

    def test_manifest_round_trip(self):
        loaded = read_manifest(self.tmp / "a")

        self.assertEqual(loaded.seed, 3)
        self.assertEqual([row.id for row in loaded.rows], [row.id for row in self.manifest.rows])
        for written, read in zip(self.manifest.rows, loaded.rows):
            self.assertEqual(read.image.resolve(), written.image.resolve())
            self.assertEqual((read.protocol, read.split), (written.protocol, written.split))

    def test_written_volumes_are_readable(self):
        row = self.manifest.rows[0]
        image = read_nifti(row.image)
        mask = read_mask(row.mask)

        self.assertEqual(image.dims, mask.dims)
        self.assertEqual(image.datatype, "float32")
        self.assertTrue((mask.data[image.data == 0] == 1).all())

    def test_protocols_come_from_headers(self):
        rebuilt = build_manifest(self.tmp / "a", seed=3)
        self.assertEqual(
            [(row.id, row.protocol, row.split) for row in rebuilt.rows],
            [(row.id, row.protocol, row.split) for row in self.manifest.rows],
        )
        self.assertIn("1x1x1mm_32x32x32", rebuilt.protocols())


class ManifestErrorTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_missing_columns(self):
        (self.tmp / MANIFEST_NAME).write_text("id,image,mask\nx,a.nii,b.nii\n", encoding="utf-8")
        with self.assertRaises(ValidationError):
            read_manifest(self.tmp)

    def test_unknown_split(self):
        (self.tmp / MANIFEST_NAME).write_text(
            "id,image,mask,protocol,split\nx,a.nii,b.nii,p,holdout\n", encoding="utf-8"
        )
        with self.assertRaises(ValidationError):
            read_manifest(self.tmp)

    def test_header_case_and_bom_tolerated(self):
        (self.tmp / MANIFEST_NAME).write_text(
            "\ufeffID, Image ,Mask,Protocol,Split\nx, a.nii ,b.nii,p,train\n", encoding="utf-8"
        )
        manifest = read_manifest(self.tmp)
        self.assertEqual(manifest.rows[0].image, self.tmp / "a.nii")
        self.assertEqual(len(manifest.split("train")), 1)

    def test_unknown_split_name_lookup(self):
        with self.assertRaises(ValidationError):
            DatasetManifest().split("holdout")

    def test_empty_corpus(self):
        (self.tmp / "images").mkdir()
        with self.assertRaises(EmptyInputError):
            build_manifest(self.tmp)

    def test_too_few_protocols_for_a_corpus(self):
        with self.assertRaises(ValidationError):
            make_corpus(self.tmp, count=4, protocols=2)

