"""Shot-data archive: CRC-checked binary records keyed by (shot_id, source).

On-disk layout under the archive root:

    archive/index.log                 one line per stored record
    archive/<shot_id>/<source>.bin    payload bytes ('/' in source becomes '__')

The index line is `<shot_id>\t<source>\t<crc32 hex>\t<size>\t<ISO time>`.
Without a root the archive runs in memory with identical semantics.
"""

from __future__ import annotations

import threading
import zlib
from dataclasses import dataclass
from pathlib import Path

from iccs.clock import Clock
from iccs.rpc import register_errors
from iccs.services.events import StorageFailure


class DuplicateRecord(Exception):
    pass


class ChecksumMismatch(Exception):
    pass


register_errors(DuplicateRecord, ChecksumMismatch)


@dataclass(frozen=True)
class StoredRecord:
    shot_id: str
    source: str
    crc32: int
    size: int
    stored_ns: int


@dataclass(frozen=True)
class FetchedRecord:
    shot_id: str
    source: str
    payload: bytes
    crc_ok: bool


def _safe_name(source: str) -> str:
    return source.replace("/", "__")


class ArchiveService:
    """Durable store for everything captured at a shot."""

    def __init__(self, clock: Clock, root: Path | None = None):
        self.clock = clock
        self.root = Path(root) if root is not None else None
        self._lock = threading.Lock()
        self._index: dict[tuple[str, str], StoredRecord] = {}
        self._blobs: dict[tuple[str, str], bytes] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._index_path = self.root / "index.log"
            self._load_index()

    def _load_index(self) -> None:
        if not self._index_path.exists():
            return
        for line in self._index_path.read_text(encoding="utf-8").splitlines():
            parts = line.split("\t")
            if len(parts) != 5:
                continue
            shot_id, source, crc_hex, size, _iso = parts
            try:
                self._index[(shot_id, source)] = StoredRecord(
                    shot_id, source, int(crc_hex, 16), int(size), 0)
            except ValueError:
                continue

    def store(self, shot_id: str, source: str, payload: bytes,
              overwrite: bool = False) -> StoredRecord:
        if not payload:
            raise ValueError("archive payload must be non-empty")
        key = (shot_id, source)
        with self._lock:
            if key in self._index and not overwrite:
                raise DuplicateRecord(f"{shot_id}/{source}")
            now = self.clock.now_ns()
            record = StoredRecord(shot_id, source, zlib.crc32(payload),
                                  len(payload), now)
            if self.root is not None:
                try:
                    shot_dir = self.root / shot_id
                    shot_dir.mkdir(parents=True, exist_ok=True)
                    (shot_dir / f"{_safe_name(source)}.bin").write_bytes(payload)
                    with self._index_path.open("a", encoding="utf-8") as f:
                        f.write(f"{shot_id}\t{source}\t{record.crc32:08x}\t"
                                f"{record.size}\t{self.clock.iso(now)}\n")
                except OSError as exc:
                    raise StorageFailure(str(exc)) from exc
            else:
                self._blobs[key] = bytes(payload)
            self._index[key] = record
            return record

    def _read_payload(self, key: tuple[str, str]) -> bytes:
        if self.root is not None:
            path = self.root / key[0] / f"{_safe_name(key[1])}.bin"
            try:
                return path.read_bytes()
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
        return self._blobs[key]

    def fetch(self, shot_id: str) -> list[FetchedRecord]:
        """Every record for a shot; checksum mismatches flagged, not fatal."""
        with self._lock:
            keys = sorted(k for k in self._index if k[0] == shot_id)
        out = []
        for key in keys:
            record = self._index[key]
            payload = self._read_payload(key)
            out.append(FetchedRecord(
                shot_id, key[1], payload,
                crc_ok=zlib.crc32(payload) == record.crc32))
        return out

    def fetch_one(self, shot_id: str, source: str) -> bytes:
        key = (shot_id, source)
        with self._lock:
            record = self._index.get(key)
        if record is None:
            raise KeyError(f"{shot_id}/{source} not archived")
        payload = self._read_payload(key)
        if zlib.crc32(payload) != record.crc32:
            raise ChecksumMismatch(f"{shot_id}/{source}")
        return payload

    def sources(self, shot_id: str) -> list[str]:
        with self._lock:
            return sorted(k[1] for k in self._index if k[0] == shot_id)

    def shot_ids(self) -> list[str]:
        with self._lock:
            return sorted({k[0] for k in self._index})
