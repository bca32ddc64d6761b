"""
The ``.vdfw`` weights file.

Layout, little-endian throughout::

    b"VDFW" | u32 version | u32 tag length | tag (UTF-8 JSON) | u32 entry count
    per entry: u32 name length | name | u32 rank | rank x u32 dims | float32 payload
    u32 CRC32 of every preceding byte
"""

import logging
import math
import struct
import zlib
from pathlib import Path

import numpy as np

from apps.core.exceptions import ChecksumError, WeightFileError, WeightVersionError
from apps.core.storage import write_atomic
from apps.unet.weights import WeightStore

logger = logging.getLogger(__name__)

MAGIC = b"VDFW"
VERSION = 1
_U32 = struct.Struct("<I")
_PAYLOAD = np.dtype("<f4")


def encode_weights(store: WeightStore) -> bytes:
    chunks = [MAGIC, _U32.pack(VERSION)]
    tag = store.tag.encode("utf-8")
    chunks += [_U32.pack(len(tag)), tag, _U32.pack(len(store))]
    for name, array in store.items():
        encoded = name.encode("utf-8")
        chunks += [_U32.pack(len(encoded)), encoded, _U32.pack(array.ndim)]
        chunks += [_U32.pack(extent) for extent in array.shape]
        chunks.append(array.astype(_PAYLOAD).tobytes(order="C"))
    body = b"".join(chunks)
    return body + _U32.pack(zlib.crc32(body))


def save_weights(store: WeightStore, path) -> Path:
    written = write_atomic(path, encode_weights(store))
    logger.info("saved %d parameters (%d tensors) to %s", store.total_count, len(store), written)
    return written


class _Cursor:
    def __init__(self, raw: bytes, end: int):
        self.raw = raw
        self.end = end
        self.position = 0

    def take(self, count, what) -> bytes:
        if count < 0 or self.position + count > self.end:
            raise WeightFileError(f"Truncated {what}", offset=self.position)
        chunk = self.raw[self.position:self.position + count]
        self.position += count
        return chunk

    def u32(self, what) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_weights(raw: bytes) -> WeightStore:
    """Parse a weights file; checks magic, then checksum, then version."""
    if raw[:4] != MAGIC:
        raise WeightFileError(f"Bad magic {bytes(raw[:4])!r}", offset=0)
    if len(raw) < 4 + 4 + 4:
        raise WeightFileError("File too short", offset=len(raw))
    body_end = len(raw) - 4
    stored = _U32.unpack(raw[body_end:])[0]
    actual = zlib.crc32(raw[:body_end])
    if stored != actual:
        raise ChecksumError(f"Checksum mismatch: stored {stored:#010x}, computed {actual:#010x}", offset=body_end)

    cursor = _Cursor(raw, body_end)
    cursor.take(4, "magic")
    version = cursor.u32("version")
    if version != VERSION:
        raise WeightVersionError(f"Unknown weights format version {version}", offset=4)

    try:
        tag = cursor.take(cursor.u32("tag length"), "tag").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise WeightFileError(f"Tag is not UTF-8: {exc}", offset=12) from exc
    store = WeightStore(tag=tag)
    for _ in range(cursor.u32("entry count")):
        start = cursor.position
        try:
            name = cursor.take(cursor.u32("name length"), "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFileError(f"Entry name is not UTF-8: {exc}", offset=start) from exc
        if not name or name in store:
            raise WeightFileError(f"Empty or duplicate entry name {name!r}", offset=start)
        rank = cursor.u32("rank")
        shape = tuple(cursor.u32("dims") for _ in range(rank))
        count = math.prod(shape)
        payload = cursor.take(count * _PAYLOAD.itemsize, f"payload of {name}")
        store.add(name, np.frombuffer(payload, dtype=_PAYLOAD).reshape(shape).astype(np.float32))
    if cursor.position != body_end:
        raise WeightFileError("Unexpected bytes after the last entry", offset=cursor.position)
    return store


def load_weights(path) -> WeightStore:
    store = decode_weights(Path(path).read_bytes())
    logger.info("loaded %d parameters (%d tensors) from %s", store.total_count, len(store), path)
    return store
