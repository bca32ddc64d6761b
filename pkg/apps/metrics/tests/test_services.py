import tempfile
from pathlib import Path
from types import SimpleNamespace
from zipfile import ZipFile

import numpy as np
from django.test import SimpleTestCase
from openpyxl import load_workbook

from apps.core.exceptions import DimensionError, EmptyInputError
from apps.core.records import read_records
from apps.metrics import reports
from apps.metrics import services as metrics_service
from apps.nifti.services import read_mask, write_nifti
from apps.volumes.services import deface
from apps.volumes.volume import MaskVolume, Volume


def _mask(defaced_indices, size=12):
    data = np.ones(size, dtype=np.uint8)
    data[list(defaced_indices)] = 0
    return MaskVolume(data.reshape(1, 1, size))


class DiceTests(SimpleTestCase):
    def test_identical_masks(self):
        mask = _mask([1, 2, 3])
        self.assertEqual(metrics_service.dice(mask, mask), 1.0)

    def test_disjoint_masks(self):
        self.assertEqual(metrics_service.dice(_mask([0, 1]), _mask([5, 6])), 0.0)

    def test_hand_computed_overlap(self):
        predicted = _mask(range(6))
        truth = _mask([3, 4, 5, 6])
        self.assertAlmostEqual(metrics_service.dice(predicted, truth), 0.6)

    def test_both_empty_is_one(self):
        self.assertEqual(metrics_service.dice(_mask([]), _mask([])), 1.0)

    def test_dim_mismatch(self):
        with self.assertRaises(DimensionError):
            metrics_service.dice(_mask([], size=4), _mask([], size=5))


class PrecisionRecallTests(SimpleTestCase):
    def test_hand_computed(self):
        precision, recall = metrics_service.precision_recall(_mask([0, 1, 2, 3]), _mask([0, 1, 2]))
        self.assertEqual((precision, recall), (0.75, 1.0))

    def test_perfect_prediction(self):
        mask = _mask([4, 7])
        self.assertEqual(metrics_service.precision_recall(mask, mask), (1.0, 1.0))

    def test_confusion_counts_cover_every_voxel(self):
        counts = metrics_service.confusion(_mask([0, 1, 2, 3]), _mask([2, 3, 4]))
        self.assertEqual((counts.tp, counts.fp, counts.fn, counts.tn), (2, 2, 1, 7))
        self.assertEqual(counts.total, 12)


class MetricPropertyTests(SimpleTestCase):
    def test_random_mask_properties(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            dims = tuple(int(x) for x in rng.integers(1, 6, size=3))
            x = MaskVolume(rng.random(dims) > rng.random())
            y = MaskVolume(rng.random(dims) > rng.random())

            d = metrics_service.dice(x, y)
            p, r = metrics_service.precision_recall(x, y)
            self.assertEqual(d, metrics_service.dice(y, x))
            for value in (d, p, r):
                self.assertTrue(0.0 <= value <= 1.0)
            if p + r > 0:
                self.assertAlmostEqual(d, 2 * p * r / (p + r))

            order = rng.permutation(x.data.size)
            px = MaskVolume(x.data.ravel()[order].reshape(dims))
            py = MaskVolume(y.data.ravel()[order].reshape(dims))
            self.assertEqual(metrics_service.dice(px, py), d)
            self.assertEqual(metrics_service.precision_recall(px, py), (p, r))


class BaselineBinarizationTests(SimpleTestCase):
    def test_unchanged_prediction_keeps_everything(self):
        original = Volume(np.random.default_rng(0).random((4, 4, 4)))
        mask = metrics_service.binarize_baseline_output(original, original)
        self.assertTrue(np.all(mask.data == 1))

    def test_recovers_defacing_mask(self):
        rng = np.random.default_rng(1)
        original = Volume(rng.uniform(0.2, 1.0, size=(5, 5, 5)).astype(np.float32))
        truth = MaskVolume(rng.random((5, 5, 5)) > 0.3)

        recovered = metrics_service.binarize_baseline_output(original, deface(original, truth), 0.01)

        np.testing.assert_array_equal(recovered.data, truth.data)

    def test_small_intensity_range_scan(self):
        rng = np.random.default_rng(5)
        original = Volume(rng.uniform(0.001, 0.005, size=(8, 8, 8)).astype(np.float32))
        truth = MaskVolume(rng.random((8, 8, 8)) > 0.4)
        self.assertGreater(int((truth.data == 0).sum()), 150)

        recovered = metrics_service.binarize_baseline_output(original, deface(original, truth))

        np.testing.assert_array_equal(recovered.data, truth.data)

    def test_zero_prediction_defaces_everything(self):
        original = Volume(np.full((3, 3, 3), 0.5))
        mask = metrics_service.binarize_baseline_output(original, Volume(np.zeros((3, 3, 3))))
        self.assertFalse(mask.data.any())


class EvaluateTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.rows = []
        rng = np.random.default_rng(2)
        for index in range(4):
            truth = MaskVolume(rng.random((6, 6, 6)) > 0.2)
            path = write_nifti(truth, self.tmp / f"mask_{index}.nii")
            self.rows.append(SimpleNamespace(id=f"p{index:03d}", protocol=f"proto{index % 2}", mask=path))

    def tearDown(self):
        self._tmp.cleanup()

    def test_oracle_against_itself(self):
        report = metrics_service.evaluate(lambda row: read_mask(row.mask), self.rows)

        self.assertEqual(report.means["dice"], 1.0)
        self.assertEqual(set(report.per_protocol), {"proto0", "proto1"})
        self.assertEqual(report.reference["dice"], 0.854)

    def test_empty_manifest(self):
        with self.assertRaises(EmptyInputError):
            metrics_service.evaluate(lambda row: None, [])

    def test_missing_ground_truth_is_skipped_and_counted(self):
        rows = self.rows + [SimpleNamespace(id="ghost", protocol="proto0", mask=self.tmp / "missing.nii")]
        report = metrics_service.evaluate(lambda row: read_mask(row.mask), rows)

        self.assertEqual(report.skipped, ["ghost"])
        self.assertEqual(len(report.rows), 4)

    def test_results_independent_of_threads(self):
        def source(row):
            mask = read_mask(row.mask)
            return MaskVolume(np.roll(mask.data, 1, axis=0))

        single = metrics_service.evaluate(source, self.rows, threads=1)
        threaded = metrics_service.evaluate(source, self.rows, threads=3)
        self.assertEqual(single.records(), threaded.records())

    def test_report_outputs(self):
        report = metrics_service.evaluate(lambda row: read_mask(row.mask), self.rows)

        reports.write_report(report, self.tmp / "report.jsonl")
        records = read_records(self.tmp / "report.jsonl")
        self.assertEqual([r["kind"] for r in records].count("image"), 4)
        self.assertEqual(records[-1]["kind"], "summary")
        self.assertEqual(records[-1]["reference"]["recall"], 0.805)

        table = reports.format_table(report)
        self.assertIn("0.854", table)
        self.assertIn("19,069,955", table)
        self.assertIn("proto1", table)

        reports.export_xlsx(report, self.tmp / "report.xlsx")
        workbook = load_workbook(self.tmp / "report.xlsx")
        self.assertEqual(workbook.sheetnames, ["Images", "Protocols", "Summary"])
        self.assertEqual(workbook["Images"].max_row, 5)

    def test_workbook_export_is_reproducible(self):
        report = metrics_service.evaluate(lambda row: read_mask(row.mask), self.rows)

        reports.export_xlsx(report, self.tmp / "first.xlsx")
        reports.export_xlsx(report, self.tmp / "second.xlsx")

        self.assertEqual((self.tmp / "first.xlsx").read_bytes(), (self.tmp / "second.xlsx").read_bytes())
        with ZipFile(self.tmp / "first.xlsx") as archive:
            self.assertEqual({info.date_time for info in archive.infolist()}, {(2000, 1, 1, 0, 0, 0)})
        properties = load_workbook(self.tmp / "first.xlsx").properties
        self.assertEqual(properties.modified, reports.EXPORT_TIMESTAMP)
        self.assertEqual(properties.created, reports.EXPORT_TIMESTAMP)
