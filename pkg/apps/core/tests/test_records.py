import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from apps.core.records import NullRecordWriter, RecordWriter, dumps_record, read_records, write_records
from apps.core.storage import write_atomic


class RecordTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_keys_are_sorted_and_compact(self):
        self.assertEqual(dumps_record({"b": 1, "a": [1.5, "x"]}), '{"a":[1.5,"x"],"b":1}')

    def test_written_records_read_back(self):
        path = self.tmp / "nested" / "metrics.jsonl"
        write_records(path, [{"iteration": 1, "loss": 0.5}, {"iteration": 2, "loss": 0.25}])

        self.assertEqual(read_records(path), [{"iteration": 1, "loss": 0.5}, {"iteration": 2, "loss": 0.25}])
        self.assertTrue(path.read_text(encoding="utf-8").endswith("\n"))

    def test_writer_flushes_each_record(self):
        path = self.tmp / "live.jsonl"
        with RecordWriter(path) as writer:
            writer.write({"kind": "iteration"})
            self.assertEqual(read_records(path), [{"kind": "iteration"}])

    def test_unused_writer_creates_nothing(self):
        path = self.tmp / "never.jsonl"
        with RecordWriter(path):
            pass
        self.assertFalse(path.exists())

    def test_null_writer(self):
        with NullRecordWriter() as writer:
            writer.write({"ignored": True})


class WriteAtomicTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_replaces_content_without_leftovers(self):
        path = self.tmp / "out" / "file.bin"
        write_atomic(path, b"first")
        write_atomic(path, b"second")

        self.assertEqual(path.read_bytes(), b"second")
        self.assertEqual([entry.name for entry in path.parent.iterdir()], ["file.bin"])

    def test_failed_write_leaves_the_old_file(self):
        path = self.tmp / "file.bin"
        write_atomic(path, b"kept")
        with self.assertRaises(TypeError):
            write_atomic(path, "not bytes")

        self.assertEqual(path.read_bytes(), b"kept")
        self.assertEqual(len(list(self.tmp.iterdir())), 1)
