"""Media catalog: the UPLOADED -> ... -> LOADED ingestion state machine.

State lives in an append-only journal of newline-delimited JSON entries, each
carrying a CRC over its own content. Recovery replays entries until the first
torn or corrupt line, which is cut off. Snapshots compact the journal.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import os
import tempfile
import threading
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)


class MediaState(str, enum.Enum):
    UPLOADED = "UPLOADED"
    HASHING = "HASHING"
    HASHED = "HASHED"
    LOADING = "LOADING"
    LOADED = "LOADED"

    def successor(self) -> "MediaState | None":
        i = _ORDER.index(self)
        return _ORDER[i + 1] if i + 1 < len(_ORDER) else None


_ORDER = list(MediaState)


class CatalogError(Exception):
    pass


class ConflictError(CatalogError):
    pass


class NotFoundError(CatalogError, KeyError):
    pass


class TransitionError(CatalogError):
    def __init__(self, media_id: int, current: MediaState, requested: MediaState):
        self.media_id = media_id
        self.current = current
        self.requested = requested
        super().__init__(
            f"media {media_id}: illegal transition {current.value} -> {requested.value}"
        )


@dataclass(frozen=True)
class MediaRecord:
    media_id: int
    source_path: str
    store_key: str
    state: MediaState = MediaState.UPLOADED
    fps: float | None = None
    duration: float | None = None
    updated_at: float = 0.0

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["state"] = self.state.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "MediaRecord":
        d = dict(d)
        d["state"] = MediaState(d["state"])
        return cls(**d)


def _entry_crc(seq, media_id, field, value, ts) -> int:
    body = json.dumps([seq, media_id, field, value, ts], sort_keys=True, separators=(",", ":"))
    return zlib.crc32(body.encode("utf-8"))


def encode_entry(seq: int, media_id: int, field: str, value, ts: float) -> bytes:
    entry = {
        "seq": seq,
        "media_id": media_id,
        "field": field,
        "value": value,
        "ts": ts,
        "crc": _entry_crc(seq, media_id, field, value, ts),
    }
    return (json.dumps(entry, separators=(",", ":")) + "\n").encode("utf-8")


def parse_journal(data: bytes) -> tuple[list[dict], int]:
    """Decode journal bytes; returns (valid entries, byte length of the valid prefix)."""
    entries = []
    pos = 0
    while pos < len(data):
        nl = data.find(b"\n", pos)
        if nl < 0:
            break
        line = data[pos:nl]
        try:
            e = json.loads(line)
            ok = e["crc"] == _entry_crc(e["seq"], e["media_id"], e["field"], e["value"], e["ts"])
        except (ValueError, KeyError, TypeError):
            ok = False
        if not ok:
            break
        entries.append(e)
        pos = nl + 1
    return entries, pos


def apply_entry(records: dict[int, MediaRecord], e: dict) -> None:
    """Fold one journal entry into ``records``. Re-applying an entry is a no-op."""
    mid, field, value, ts = e["media_id"], e["field"], e["value"], e["ts"]
    if field == "create":
        if mid not in records:
            records[mid] = MediaRecord.from_json(value)
        return
    rec = records.get(mid)
    if rec is None:
        log.warning("journal entry %s for unknown media %s ignored", e["seq"], mid)
        return
    if field == "state":
        new = MediaState(value)
        if _ORDER.index(new) == _ORDER.index(rec.state) + 1:
            records[mid] = dataclasses.replace(rec, state=new, updated_at=ts)
    elif field in ("fps", "duration"):
        records[mid] = dataclasses.replace(rec, **{field: value}, updated_at=max(ts, rec.updated_at))
    else:
        log.warning("journal entry %s has unknown field %r", e["seq"], field)


class Catalog:
    """Single-writer media catalog persisted under a directory.

    ``journal.ndjson`` holds state-change entries; ``snapshot.json`` (a JSON
    array of records) is written by :meth:`compact`.
    """

    JOURNAL = "journal.ndjson"
    SNAPSHOT = "snapshot.json"

    def __init__(self, directory, fsync: bool = True):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._records: dict[int, MediaRecord] = {}
        self._seq = 0
        self._recover()
        self._journal = open(self.journal_path, "ab")

    @property
    def journal_path(self) -> Path:
        return self.dir / self.JOURNAL

    @property
    def snapshot_path(self) -> Path:
        return self.dir / self.SNAPSHOT

    def _recover(self) -> None:
        records: dict[int, MediaRecord] = {}
        if self.snapshot_path.exists():
            for d in json.loads(self.snapshot_path.read_text()):
                rec = MediaRecord.from_json(d)
                records[rec.media_id] = rec
        seq = 0
        if self.journal_path.exists():
            data = self.journal_path.read_bytes()
            entries, valid = parse_journal(data)
            for e in entries:
                apply_entry(records, e)
                seq = max(seq, e["seq"])
            if valid < len(data):
                log.warning("truncating %d torn journal bytes", len(data) - valid)
                with open(self.journal_path, "r+b") as f:
                    f.truncate(valid)
        self._records = records
        self._keys = {r.store_key for r in records.values()}
        self._next_id = max(records, default=0) + 1
        self._seq = seq

    def close(self) -> None:
        with self._lock:
            if not self._journal.closed:
                self._journal.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _append(self, media_id: int, field: str, value) -> float:
        ts = time.time()
        self._seq += 1
        self._journal.write(encode_entry(self._seq, media_id, field, value, ts))
        self._journal.flush()
        if self.fsync:
            os.fsync(self._journal.fileno())
        return ts

    def create_media(self, source_path: str, store_key: str) -> MediaRecord:
        if not store_key:
            raise ValueError("store_key must be non-empty")
        with self._lock:
            if store_key in self._keys:
                raise ConflictError(f"store_key already catalogued: {store_key!r}")
            mid = self._next_id
            self._next_id += 1
            rec = MediaRecord(mid, str(source_path), store_key, MediaState.UPLOADED, updated_at=time.time())
            self._append(mid, "create", rec.to_json())
            self._records[mid] = rec
            self._keys.add(store_key)
            return rec

    def transition(self, media_id: int, new_state: MediaState | str) -> MediaRecord:
        new_state = MediaState(new_state)
        with self._lock:
            rec = self._get(media_id)
            if rec.state.successor() is not new_state:
                raise TransitionError(media_id, rec.state, new_state)
            ts = self._append(media_id, "state", new_state.value)
            rec = dataclasses.replace(rec, state=new_state, updated_at=ts)
            self._records[media_id] = rec
            return rec

    def set_media_info(self, media_id: int, fps: float, duration: float) -> MediaRecord:
        if fps <= 0 or duration < 0:
            raise ValueError(f"invalid fps/duration: {fps}, {duration}")
        with self._lock:
            rec = self._get(media_id)
            self._append(media_id, "fps", fps)
            ts = self._append(media_id, "duration", duration)
            rec = dataclasses.replace(rec, fps=fps, duration=duration, updated_at=ts)
            self._records[media_id] = rec
            return rec

    def _get(self, media_id: int) -> MediaRecord:
        try:
            return self._records[media_id]
        except KeyError:
            raise NotFoundError(f"no media with id {media_id}") from None

    def get(self, media_id: int) -> MediaRecord:
        with self._lock:
            return self._get(media_id)

    def find(self, media_id: int) -> MediaRecord | None:
        return self._records.get(media_id)

    def list_media(self, state: MediaState | str | None = None) -> list[MediaRecord]:
        with self._lock:
            recs = list(self._records.values())
        if state is not None:
            state = MediaState(state)
            recs = [r for r in recs if r.state is state]
        return sorted(recs, key=lambda r: r.media_id)

    def summary(self) -> dict[str, int]:
        counts = {s.value: 0 for s in MediaState}
        for r in self.list_media():
            counts[r.state.value] += 1
        return counts

    def compact(self) -> None:
        """Write a snapshot (atomic rename) and start an empty journal."""
        with self._lock:
            payload = json.dumps([r.to_json() for r in sorted(self._records.values(), key=lambda r: r.media_id)])
            fd, tmp = tempfile.mkstemp(prefix=".snap-", dir=self.dir)
            with os.fdopen(fd, "w") as f:
                f.write(payload)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, self.snapshot_path)
            # a crash before the journal swap just replays entries the snapshot
            # already reflects; apply_entry makes that a no-op
            self._journal.close()
            fd, tmp = tempfile.mkstemp(prefix=".journal-", dir=self.dir)
            os.close(fd)
            os.replace(tmp, self.journal_path)
            self._journal = open(self.journal_path, "ab")


def replay(directory) -> dict[int, MediaRecord]:
    """Rebuild the catalog contents from disk without opening it for writing."""
    d = Path(directory)
    records: dict[int, MediaRecord] = {}
    snap = d / Catalog.SNAPSHOT
    if snap.exists():
        for item in json.loads(snap.read_text()):
            rec = MediaRecord.from_json(item)
            records[rec.media_id] = rec
    journal = d / Catalog.JOURNAL
    if journal.exists():
        for e in parse_journal(journal.read_bytes())[0]:
            apply_entry(records, e)
    return records
