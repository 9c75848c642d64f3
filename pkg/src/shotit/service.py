"""Query path: image -> descriptor -> vector -> index -> ranked clips."""

from __future__ import annotations

import io
import json
import logging
import math
import os
import shlex
import shutil
import subprocess
import tempfile
import threading
import zipfile
from dataclasses import dataclass, field
from pathlib import PurePosixPath
from typing import Callable, Iterator, Sequence

import numpy as np

from .catalog import Catalog, MediaState
from .config import Config
from .descriptor import DescriptorError, compute_descriptor, cut_borders
from .frames import FrameBundle, FrameSourceError
from .imageio import ImageDecodeError, decode_image, encode_png
from .objectstore import ObjectNotFound, ObjectStore
from .pipeline import frames_key, lum_key
from .vecindex import IvfIndex, SearchHit, VectorIndex
from .vectorize import normalize_coeffs

log = logging.getLogger(__name__)

MAX_TOP_K = 100


class ServiceError(Exception):
    status = 500


class BadRequest(ServiceError):
    status = 400


class NotFound(ServiceError):
    status = 404


class UpstreamError(ServiceError):
    status = 502


@dataclass
class SearchRequest:
    image: bytes
    cut_borders: bool = True
    top_k: int = 10

    def __post_init__(self):
        if not isinstance(self.top_k, int) or not 1 <= self.top_k <= MAX_TOP_K:
            raise BadRequest(f"top_k must be in [1, {MAX_TOP_K}], got {self.top_k}")


@dataclass(frozen=True)
class ClipRange:
    start: float
    end: float


@dataclass
class ResultRow:
    media_id: int
    filename: str
    start: float
    end: float
    at: float
    similarity: float
    video_url: str
    image_url: str

    def to_json(self) -> dict:
        return {
            "media_id": self.media_id,
            "filename": self.filename,
            "from": self.start,
            "to": self.end,
            "at": self.at,
            "similarity": self.similarity,
            "video_url": self.video_url,
            "image_url": self.image_url,
        }


@dataclass
class SearchResponse:
    frame_count: int
    results: list[ResultRow] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"frame_count": self.frame_count, "results": [r.to_json() for r in self.results]}


def snap_clip_range(
    sums: Sequence[float], t_hit: float, fps: float, theta: float = 0.35, t0: float = 0.0
) -> ClipRange:
    """Grow a clip outwards from ``t_hit`` until the luminance sum jumps.

    ``sums[i]`` is the luminance sum of the frame at ``t0 + i / fps``. A jump is
    an adjacent-frame difference above ``theta * mean(sums)``; the clip stops
    just inside it. Without a jump the clip runs to the window edge.
    """
    sums = np.asarray(sums, dtype=np.float64)
    n = len(sums)
    if n == 0:
        raise ValueError("empty luminance window")
    if not fps > 0 or not theta > 0:
        raise ValueError("fps and theta must be positive")
    c = min(max(int(round((t_hit - t0) * fps)), 0), n - 1)
    jump = np.abs(np.diff(sums)) > theta * sums.mean()
    i = c
    while i > 0 and not jump[i - 1]:
        i -= 1
    j = c
    while j < n - 1 and not jump[j]:
        j += 1
    start = min(t0 + i / fps, t_hit)
    end = max(t0 + j / fps, t_hit)
    return ClipRange(start, end)


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".") if x != int(x) else str(int(x))


def assemble_results(
    hits: Sequence[SearchHit],
    catalog: Catalog,
    media_base_url: str,
    clip_for: Callable[[SearchHit], ClipRange] | None = None,
    frame_count: int = 0,
) -> SearchResponse:
    """Join hits with catalog rows and attach clip/image URLs, keeping hit order."""
    base = media_base_url.rstrip("/")
    rows = []
    for hit in hits:
        rec = catalog.find(hit.media_id)
        if rec is None:
            log.warning("hit references unknown media %d; dropped", hit.media_id)
            continue
        clip = clip_for(hit) if clip_for else ClipRange(hit.t, hit.t)
        rows.append(
            ResultRow(
                media_id=hit.media_id,
                filename=PurePosixPath(rec.source_path.replace("\\", "/")).name,
                start=clip.start,
                end=clip.end,
                at=hit.t,
                similarity=min(1.0, max(0.0, hit.score)),
                video_url=f"{base}/video/{hit.media_id}?from={_fmt(clip.start)}&to={_fmt(clip.end)}",
                image_url=f"{base}/image/{hit.media_id}?t={_fmt(hit.t)}",
            )
        )
    return SearchResponse(frame_count, rows)


class SearchService:
    def __init__(self, index: VectorIndex, catalog: Catalog, store: ObjectStore, config: Config | None = None):
        self.index = index
        self.catalog = catalog
        self.store = store
        self.config = config or Config()
        self._lum_cache: dict[int, tuple[float, np.ndarray]] = {}
        self._cache_lock = threading.Lock()

    # -- search ------------------------------------------------------------

    def query_vector(self, image: bytes, cut: bool = True) -> np.ndarray:
        try:
            img = decode_image(image)
        except ImageDecodeError as exc:
            raise BadRequest(str(exc)) from exc
        if cut:
            img, _ = cut_borders(img)
        try:
            return normalize_coeffs(compute_descriptor(img))
        except DescriptorError as exc:
            raise BadRequest(str(exc)) from exc

    def search_hits(self, q: np.ndarray, k: int) -> list[SearchHit]:
        nprobe = self.config.nprobe or None
        if self.config.search_mode == "ivf" and isinstance(self.index, IvfIndex):
            if nprobe is not None and self.index.trained:
                nprobe = min(nprobe, self.index.nlist)
            return self.index.search_ivf(q, k, nprobe)
        return self.index.search_flat(q, k)

    def handle_search(self, req: SearchRequest) -> SearchResponse:
        q = self.query_vector(req.image, req.cut_borders)
        frame_count = len(self.index)
        if frame_count == 0:
            return SearchResponse(0)
        hits = self.search_hits(q, req.top_k)
        return assemble_results(hits, self.catalog, self.config.media_base_url, self.clip_for, frame_count)

    # -- clip ranges -------------------------------------------------------

    def _luminance(self, media_id: int) -> tuple[float, np.ndarray] | None:
        with self._cache_lock:
            if media_id in self._lum_cache:
                return self._lum_cache[media_id]
        try:
            d = json.loads(self.store.get(lum_key(media_id)))
        except (ObjectNotFound, ValueError):
            return None
        entry = (float(d["fps"]), np.asarray(d["sums"], dtype=np.float64))
        with self._cache_lock:
            self._lum_cache[media_id] = entry
        return entry

    def clip_for(self, hit: SearchHit) -> ClipRange:
        lum = self._luminance(hit.media_id)
        if lum is None:
            return ClipRange(hit.t, hit.t)
        fps, sums = lum
        w = int(round(self.config.clip_window_s * fps))
        c = min(max(int(round(hit.t * fps)), 0), len(sums) - 1)
        lo, hi = max(0, c - w), min(len(sums) - 1, c + w)
        clip = snap_clip_range(sums[lo : hi + 1], hit.t, fps, self.config.theta, t0=lo / fps)
        rec = self.catalog.find(hit.media_id)
        if rec is not None and rec.duration is not None:
            clip = ClipRange(max(0.0, clip.start), min(clip.end, rec.duration))
        return clip

    # -- media -------------------------------------------------------------

    def _loaded(self, media_id: int):
        rec = self.catalog.find(media_id)
        if rec is None or rec.state is not MediaState.LOADED:
            raise NotFound(f"media {media_id} not available")
        return rec

    def _bundle(self, rec) -> FrameBundle:
        key = frames_key(rec)
        path = self.store.local_path(key)
        try:
            if path is not None:
                if not path.is_file():
                    raise ObjectNotFound(key)
                return FrameBundle(path)
            return FrameBundle(self.store.get(key))
        except ObjectNotFound:
            raise NotFound(f"frames for media {rec.media_id} missing") from None
        except FrameSourceError as exc:
            raise ServiceError(str(exc)) from exc

    def serve_image(self, media_id: int, t: float) -> bytes:
        rec = self._loaded(media_id)
        if not math.isfinite(t) or t < 0:
            raise BadRequest(f"bad timestamp {t}")
        frames = self._bundle(rec)
        return encode_png(frames.frame(frames.nearest_index(t)))

    def serve_video(self, media_id: int, start: float, end: float) -> Iterator[bytes]:
        """Clip bytes for [start, end]. The first chunk is produced eagerly so
        failures surface before any output is sent."""
        if not (math.isfinite(start) and math.isfinite(end)) or start < 0 or start > end:
            raise BadRequest(f"bad clip range from={start} to={end}")
        rec = self._loaded(media_id)
        if self.config.clipper_cmd:
            gen = self._run_clipper(rec, start, end)
        else:
            gen = iter([self._frames_zip(rec, start, end)])
        first = next(gen, b"")

        def chain():
            if first:
                yield first
            yield from gen

        return chain()

    def _frames_zip(self, rec, start: float, end: float) -> bytes:
        frames = self._bundle(rec)
        lo, hi = frames.nearest_index(start), frames.nearest_index(end)
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as z:
            z.writestr(
                "manifest.json",
                json.dumps({"fps": frames.fps, "from": start, "to": end, "frame_count": hi - lo + 1}),
            )
            for i in range(lo, hi + 1):
                z.writestr(frames.names[i], frames.frame_bytes(i))
        return buf.getvalue()

    def _run_clipper(self, rec, start: float, end: float) -> Iterator[bytes]:
        tmpdir = None
        path = self.store.local_path(rec.store_key)
        if path is None:
            tmpdir = tempfile.mkdtemp(prefix="shotit-clip-")
            path = os.path.join(tmpdir, PurePosixPath(rec.store_key).name)
            with open(path, "wb") as f:
                f.write(self.store.get(rec.store_key))
        cmd = self.config.clipper_cmd.format(
            store_path=shlex.quote(str(path)), **{"from": _fmt(start), "to": _fmt(end)}
        )
        proc = subprocess.Popen(cmd, shell=True, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        try:
            sent = False
            while True:
                chunk = proc.stdout.read(64 * 1024)
                if not chunk:
                    break
                rc = proc.poll()
                if not sent and rc not in (None, 0):
                    break
                sent = True
                yield chunk
            stderr = proc.stderr.read()
            rc = proc.wait()
            if rc != 0:
                excerpt = stderr.decode(errors="replace")[-500:]
                if not sent:
                    raise UpstreamError(f"clipper exited {rc}: {excerpt}")
                log.error("clipper exited %d mid-stream: %s", rc, excerpt)
        finally:
            if proc.poll() is None:
                proc.kill()
                proc.wait()
            proc.stdout.close()
            proc.stderr.close()
            if tmpdir is not None:
                shutil.rmtree(tmpdir, ignore_errors=True)

    def status(self) -> dict:
        info = {"frame_count": len(self.index), "media": self.catalog.summary()}
        if isinstance(self.index, IvfIndex):
            info["index"] = {"kind": "ivf", "trained": self.index.trained, "nlist": self.index.nlist,
                             "nprobe": self.index.nprobe}
        else:
            info["index"] = {"kind": "flat"}
        return info
