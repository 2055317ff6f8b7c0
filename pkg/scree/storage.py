from __future__ import annotations

from dataclasses import dataclass
import json
import logging
import os
from pathlib import Path
import struct
import threading
from typing import Any, Callable, Iterator

from scree.models import ScreeError, canonical_json

# Log: magic, u16 version, then (u32 length, JSON {"id", "doc"}) records. Latest version of an id wins.
MAGIC = b"SCDS"
VERSION = 1
HEADER = struct.Struct("<4sH")
LENGTH = struct.Struct("<I")

logger = logging.getLogger(__name__)


class StoreError(ScreeError):
    pass


class CorruptRecordError(StoreError):
    pass


class DocStore:
    def __init__(self, path: Path, name: str | None = None, fsync: bool = False) -> None:
        self.path = path
        self.name = name or path.stem
        self.fsync = fsync
        self.scan_errors = 0
        self._lock = threading.Lock()
        self._index: dict[str, tuple[int, int]] = {}
        self._end = 0
        self._file: Any = None
        self._read_fd = -1
        self._open()

    def _open(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        if fresh:
            with open(self.path, "wb") as handle:
                handle.write(HEADER.pack(MAGIC, VERSION))
            self._end = HEADER.size
        else:
            self._recover()
        self._file = open(self.path, "ab")
        self._read_fd = os.open(self.path, os.O_RDONLY)

    def _recover(self) -> None:
        data = self.path.read_bytes()
        if len(data) < HEADER.size:
            raise StoreError(f"{self.path}: truncated header")
        magic, version = HEADER.unpack_from(data, 0)
        if magic != MAGIC or version != VERSION:
            raise StoreError(f"{self.path}: not a document store (magic {magic!r}, v{version})")

        pos = HEADER.size
        corrupt = 0
        while pos + LENGTH.size <= len(data):
            (length,) = LENGTH.unpack_from(data, pos)
            start = pos + LENGTH.size
            if start + length > len(data):
                break
            try:
                record = json.loads(data[start : start + length].decode("utf-8"))
                doc_id = record["id"]
            except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError):
                corrupt += 1
            else:
                self._index[str(doc_id)] = (start, length)
            pos = start + length

        if pos < len(data):
            logger.warning(
                "%s: dropping %d bytes of a torn trailing record", self.path, len(data) - pos
            )
            os.truncate(self.path, pos)
        if corrupt:
            logger.warning("%s: skipped %d corrupt records", self.path, corrupt)
        self._end = pos
        logger.info("%s: recovered %d documents", self.path, len(self._index))

    def put_doc(self, doc_id: str, doc: Any) -> None:
        if not doc_id:
            raise ValueError("document id must be non-empty")
        payload = canonical_json({"id": doc_id, "doc": doc}).encode("utf-8")
        with self._lock:
            offset = self._end
            try:
                self._file.write(LENGTH.pack(len(payload)) + payload)
                self._file.flush()
                if self.fsync:
                    os.fsync(self._file.fileno())
            except OSError as exc:
                self._rollback(offset)
                raise StoreError(f"{self.path}: write failed: {exc}") from exc
            self._index[doc_id] = (offset + LENGTH.size, len(payload))
            self._end = offset + LENGTH.size + len(payload)

    def _rollback(self, offset: int) -> None:
        try:
            self._file.close()
            os.truncate(self.path, offset)
        except OSError:
            logger.exception("%s: could not roll back to offset %d", self.path, offset)
        self._file = open(self.path, "ab")

    def get_doc(self, doc_id: str) -> Any | None:
        location = self._index.get(doc_id)
        if location is None:
            return None
        return self._read(doc_id, location)

    def _read(self, doc_id: str, location: tuple[int, int]) -> Any:
        offset, length = location
        raw = os.pread(self._read_fd, length, offset)
        if len(raw) < length:
            raise CorruptRecordError(f"{self.path}: short read for id {doc_id}")
        try:
            record = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptRecordError(f"{self.path}: corrupt record for id {doc_id}") from exc
        if not isinstance(record, dict) or record.get("id") != doc_id:
            raise CorruptRecordError(f"{self.path}: record at {offset} is not id {doc_id}")
        return record.get("doc")

    def scan(self, predicate: Callable[[Any], bool] | None = None) -> Iterator[tuple[str, Any]]:
        """Latest version of every id, in order of first write."""
        with self._lock:
            entries = list(self._index.items())
        for doc_id, location in entries:
            try:
                doc = self._read(doc_id, location)
            except CorruptRecordError as exc:
                self.scan_errors += 1
                logger.warning("%s", exc)
                continue
            if predicate is None or predicate(doc):
                yield doc_id, doc

    @property
    def count(self) -> int:
        return len(self._index)

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self._index

    def close(self) -> None:
        with self._lock:
            if self._file is not None and not self._file.closed:
                self._file.close()
            if self._read_fd >= 0:
                os.close(self._read_fd)
                self._read_fd = -1

    def __enter__(self) -> "DocStore":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


@dataclass
class Stores:
    tweets: DocStore
    images: DocStore
    feature_index_path: Path

    def close(self) -> None:
        self.tweets.close()
        self.images.close()


def open_stores(directory: Path, fsync: bool = False) -> Stores:
    directory.mkdir(parents=True, exist_ok=True)
    return Stores(
        tweets=DocStore(directory / "tweets.log", name="tweet_index", fsync=fsync),
        images=DocStore(directory / "images.log", name="image_index", fsync=fsync),
        feature_index_path=directory / "features.idx",
    )
