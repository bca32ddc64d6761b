"""
Line-record files (JSON Lines) for metrics, timings and reports.
"""

import json
from pathlib import Path

from django.core.serializers.json import DjangoJSONEncoder


def dumps_record(record) -> str:
    return json.dumps(record, cls=DjangoJSONEncoder, sort_keys=True, separators=(",", ":"))


class RecordWriter:
    """Append-only JSON Lines writer; opened lazily, flushed per record."""

    def __init__(self, path):
        self.path = Path(path)
        self._handle = None

    def write(self, record):
        if self._handle is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("w", encoding="utf-8", newline="\n")
        self._handle.write(dumps_record(record) + "\n")
        self._handle.flush()

    def close(self):
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


class NullRecordWriter:
    def write(self, record):
        pass

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def write_records(path, records):
    with RecordWriter(path) as writer:
        for record in records:
            writer.write(record)


def read_records(path) -> list:
    with Path(path).open(encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]
