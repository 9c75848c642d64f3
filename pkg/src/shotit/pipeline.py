"""Index-side workers: watch -> stage -> hash -> load.

Each stage drives the catalog state machine. Objects written to the store:

* ``media/<relative path>`` - the uploaded file (a frame bundle or a video)
* ``frames/<media_id>.zip`` - decoded frames, for media that were not bundles
* ``hash/<media_id>.xml.gz`` - the per-frame hash timeline
* ``lum/<media_id>.json`` - per-frame luminance sums for clip snapping
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .catalog import Catalog, MediaRecord, MediaState
from .descriptor import compute_descriptor, luminance_sum
from .frames import FrameBundle, FrameSource, FrameSourceError, bundle_directory, is_bundle, run_decoder
from .hashfile import HashTimeline, dedup_timeline, hashfile_bytes, read_hashfile
from .imageio import RasterImage
from .objectstore import ObjectStore
from .vecindex import IvfIndex, VectorIndex
from .vectorize import normalize_coeffs

log = logging.getLogger(__name__)

DEDUP_WINDOW = 2.0


class WatchError(OSError):
    pass


class HashingError(RuntimeError):
    pass


def hash_key(media_id: int) -> str:
    return f"hash/{media_id}.xml.gz"


def lum_key(media_id: int) -> str:
    return f"lum/{media_id}.json"


def frames_key(rec: MediaRecord) -> str:
    if rec.store_key.lower().endswith(".zip"):
        return rec.store_key
    return f"frames/{rec.media_id}.zip"


def record_id(media_id: int, frame_index: int) -> int:
    """64-bit vector id: media id in the high half, frame index in the low half."""
    return (media_id << 32) | frame_index


# -- watcher ---------------------------------------------------------------


class IncomingWatcher:
    """Polls a directory and reports each file once its size has settled.

    A file is complete when two consecutive polls see the same size and mtime.
    Each path is reported once while it exists; if it disappears and returns,
    it is reported again.
    """

    def __init__(self, directory, interval: float = 2.0):
        self.dir = Path(directory)
        if not self.dir.is_dir() or not os.access(self.dir, os.R_OK | os.X_OK):
            raise WatchError(f"incoming directory not readable: {self.dir}")
        self.interval = interval
        self._seen: dict[Path, tuple[int, int]] = {}
        self._emitted: set[Path] = set()

    def _scan(self) -> dict[Path, tuple[int, int]]:
        out = {}
        for dirpath, dirnames, files in os.walk(self.dir):
            dirnames[:] = [d for d in dirnames if not d.startswith(".")]
            for name in files:
                if name.startswith("."):
                    continue
                p = Path(dirpath, name)
                try:
                    st = p.stat()
                except FileNotFoundError:
                    continue
                out[p] = (st.st_size, st.st_mtime_ns)
        return out

    def poll(self) -> list[Path]:
        current = self._scan()
        ready = sorted(
            p for p, sig in current.items() if p not in self._emitted and self._seen.get(p) == sig
        )
        self._emitted.update(ready)
        self._emitted &= set(current)
        self._seen = current
        return ready

    def events(self, stop: threading.Event | None = None) -> Iterator[Path]:
        while stop is None or not stop.is_set():
            yield from self.poll()
            if stop is not None:
                stop.wait(self.interval)
            else:
                time.sleep(self.interval)


def watch_incoming(directory, interval: float = 2.0, stop: threading.Event | None = None) -> Iterator[Path]:
    return IncomingWatcher(directory, interval).events(stop)


# -- staging ---------------------------------------------------------------


def stage_media(path, store: ObjectStore, catalog: Catalog, root=None) -> MediaRecord:
    """Upload one incoming file, catalogue it as UPLOADED, then remove the source.

    If the upload fails the exception propagates and the file stays put.
    """
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    rel = path.relative_to(root).as_posix()
    data = path.read_bytes()
    key = f"media/{rel}"
    taken = {r.store_key for r in catalog.list_media()}
    n = 1
    while key in taken:
        key = f"media/{Path(rel).with_suffix('').as_posix()}-{n}{path.suffix}"
        n += 1
    store.put(key, data)
    rec = catalog.create_media(str(path), key)
    path.unlink()
    log.info("staged %s as media %d (%s)", path, rec.media_id, key)
    return rec


# -- hashing ---------------------------------------------------------------


def measure_frames(frames: Iterable[RasterImage], fps: float) -> tuple[HashTimeline, list[float]]:
    """Hash every frame and record its luminance sum; entry i sits at t = i / fps."""
    if not fps > 0:
        raise ValueError(f"fps must be positive, got {fps}")
    entries = []
    sums = []
    it = iter(frames)
    i = 0
    while True:
        try:
            img = next(it)
        except StopIteration:
            break
        except FrameSourceError:
            raise
        except Exception as exc:
            raise FrameSourceError(str(exc), frame=i) from exc
        try:
            h = compute_descriptor(img)
        except ValueError as exc:
            raise FrameSourceError(str(exc), frame=i) from exc
        entries.append((i / fps, h))
        sums.append(luminance_sum(img))
        i += 1
    if not entries:
        raise FrameSourceError("frame source yielded no frames")
    return HashTimeline(fps, entries), sums


def hash_media(frames: Iterable[RasterImage], fps: float) -> HashTimeline:
    return measure_frames(frames, fps)[0]


def _open_frames(rec: MediaRecord, store: ObjectStore, decoder_cmd: str | None) -> FrameSource:
    data = store.get(rec.store_key)
    if is_bundle(data):
        return FrameBundle(data)
    if not decoder_cmd:
        raise HashingError(f"media {rec.media_id} is not a frame bundle and no decoder is configured")
    with tempfile.TemporaryDirectory(prefix="shotit-decode-") as tmp:
        src = Path(tmp, "input" + Path(rec.store_key).suffix)
        src.write_bytes(data)
        out = Path(tmp, "frames")
        out.mkdir()
        bundle = bundle_directory(run_decoder(decoder_cmd, src, out))
    store.put(frames_key(rec), bundle)
    return FrameBundle(bundle)


def hash_stored_media(
    rec: MediaRecord, store: ObjectStore, catalog: Catalog, decoder_cmd: str | None = None
) -> HashTimeline:
    """UPLOADED -> HASHING -> HASHED for one record (also resumes a HASHING one)."""
    if rec.state is MediaState.UPLOADED:
        rec = catalog.transition(rec.media_id, MediaState.HASHING)
    elif rec.state is not MediaState.HASHING:
        raise HashingError(f"media {rec.media_id} is {rec.state.value}, not UPLOADED/HASHING")
    frames = _open_frames(rec, store, decoder_cmd)
    tl, sums = measure_frames(frames, frames.fps)
    tl.media = str(rec.media_id)
    store.put(hash_key(rec.media_id), hashfile_bytes(tl))
    store.put(lum_key(rec.media_id), json.dumps({"fps": frames.fps, "sums": sums}).encode())
    catalog.set_media_info(rec.media_id, frames.fps, len(frames) / frames.fps)
    catalog.transition(rec.media_id, MediaState.HASHED)
    log.info("hashed media %d: %d frames", rec.media_id, len(tl))
    return tl


# -- loading ---------------------------------------------------------------


def timeline_vectors(tl: HashTimeline) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(frame indices, timestamps, unit vectors) for every entry of ``tl``."""
    if not tl.entries:
        return np.empty(0, dtype=np.int64), np.empty(0), np.empty((0, 100))
    ts = np.array([t for t, _ in tl.entries])
    frame_idx = np.rint(ts * tl.fps).astype(np.int64)
    vecs = np.stack([normalize_coeffs(h) for _, h in tl.entries])
    return frame_idx, ts, vecs


def _insert_timeline(tl: HashTimeline, index: VectorIndex, media_id: int) -> int:
    deduped = dedup_timeline(tl, DEDUP_WINDOW)
    frame_idx, ts, vecs = timeline_vectors(deduped)
    ids = [record_id(media_id, int(i)) for i in frame_idx]
    return index.insert_arrays(ids, np.full(len(ids), media_id), ts, vecs)


def load_hashfile(src, index: VectorIndex, catalog: Catalog, media_id: int) -> int:
    """HASHED -> LOADING -> LOADED: dedup, vectorize and index one hash file.

    ``src`` is a path, raw gzip bytes, or a binary file object. If insertion
    fails the record stays LOADING for :func:`resume_loading`.
    """
    catalog.transition(media_id, MediaState.LOADING)
    n = _insert_timeline(read_hashfile(src), index, media_id)
    catalog.transition(media_id, MediaState.LOADED)
    log.info("loaded media %d: %d vectors", media_id, n)
    return n


def resume_loading(src, index: VectorIndex, catalog: Catalog, media_id: int) -> int:
    """Retry a load left in LOADING: drop partial vectors, insert again, mark LOADED."""
    rec = catalog.get(media_id)
    if rec.state is not MediaState.LOADING:
        raise HashingError(f"media {media_id} is {rec.state.value}, not LOADING")
    index.delete_media(media_id)
    n = _insert_timeline(read_hashfile(src), index, media_id)
    catalog.transition(media_id, MediaState.LOADED)
    return n


# -- orchestration ---------------------------------------------------------


@dataclass
class RunReport:
    staged: list[int] = field(default_factory=list)
    hashed: list[int] = field(default_factory=list)
    loaded: dict[int, int] = field(default_factory=dict)
    failed: dict[int, str] = field(default_factory=dict)


class Pipeline:
    """Runs the watcher, hasher and loader loops against shared components."""

    def __init__(
        self,
        store: ObjectStore,
        catalog: Catalog,
        index: VectorIndex,
        incoming_dir=None,
        decoder_cmd: str | None = None,
        poll_interval: float = 2.0,
        snapshot_path=None,
        train_seed: int = 0,
        nlist: int | None = None,
        on_loaded: Callable[[int], None] | None = None,
    ):
        self.store = store
        self.catalog = catalog
        self.index = index
        self.decoder_cmd = decoder_cmd
        self.snapshot_path = snapshot_path
        self.train_seed = train_seed
        self.nlist = nlist
        self.on_loaded = on_loaded
        self.watcher = IncomingWatcher(incoming_dir, poll_interval) if incoming_dir is not None else None

    def stage_ready(self, report: RunReport) -> None:
        if self.watcher is None:
            return
        for path in self.watcher.poll():
            try:
                rec = stage_media(path, self.store, self.catalog, self.watcher.dir)
                report.staged.append(rec.media_id)
            except Exception as exc:
                log.error("staging %s failed, left for retry: %s", path, exc)

    def hash_pending(self, report: RunReport, include_hashing: bool = False) -> None:
        states = [MediaState.UPLOADED] + ([MediaState.HASHING] if include_hashing else [])
        for state in states:
            for rec in self.catalog.list_media(state):
                try:
                    hash_stored_media(rec, self.store, self.catalog, self.decoder_cmd)
                    report.hashed.append(rec.media_id)
                except Exception as exc:
                    log.error("hashing media %d failed: %s", rec.media_id, exc)
                    report.failed[rec.media_id] = str(exc)

    def load_pending(self, report: RunReport, include_loading: bool = False) -> None:
        todo = self.catalog.list_media(MediaState.HASHED)
        if include_loading:
            todo += self.catalog.list_media(MediaState.LOADING)
        for rec in todo:
            try:
                data = self.store.get(hash_key(rec.media_id))
                if rec.state is MediaState.LOADING:
                    n = resume_loading(data, self.index, self.catalog, rec.media_id)
                else:
                    n = load_hashfile(data, self.index, self.catalog, rec.media_id)
                report.loaded[rec.media_id] = n
                if self.on_loaded:
                    self.on_loaded(rec.media_id)
            except Exception as exc:
                log.error("loading media %d failed: %s", rec.media_id, exc)
                report.failed[rec.media_id] = str(exc)

    def finish(self, report: RunReport) -> None:
        if report.loaded and isinstance(self.index, IvfIndex) and self.index.needs_training():
            self.index.train(self.nlist, seed=self.train_seed)
            log.info("trained IVF: nlist=%d over %d vectors", self.index.nlist, len(self.index))
        if report.loaded and self.snapshot_path is not None:
            self.index.save_snapshot(self.snapshot_path)

    def run_once(self, retry: bool = False) -> RunReport:
        report = RunReport()
        self.stage_ready(report)
        self.hash_pending(report, include_hashing=retry)
        self.load_pending(report, include_loading=retry)
        self.finish(report)
        return report

    def retry(self) -> RunReport:
        """Resume records stuck in HASHING or LOADING after a crash or failure."""
        return self.run_once(retry=True)

    def run_forever(self, stop: threading.Event) -> None:
        interval = self.watcher.interval if self.watcher else 2.0
        # first pass also picks up work interrupted by a previous crash
        self.retry()
        while not stop.wait(interval):
            self.run_once()
