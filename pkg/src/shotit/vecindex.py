"""In-memory inner-product vector index: exhaustive flat search plus IVF-flat.

Records are (id, media_id, t, vector). Scores are inner products, which equal
cosine similarity for the unit-norm vectors produced by the vectorizer. Result
order is score descending with ties broken by (media_id, t) ascending, then id.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
import threading
import zlib
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DIM = 100
SNAPSHOT_MAGIC = b"SHOTVIX\x00"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sIIIQII")  # magic, version, kind, dim, n, nlist, nprobe
_KIND_FLAT, _KIND_IVF = 0, 1


class DuplicateIdError(ValueError):
    def __init__(self, ids):
        self.ids = sorted(int(i) for i in ids)
        super().__init__(f"{len(self.ids)} duplicate id(s): {self.ids[:20]}")


class SnapshotError(IOError):
    pass


@dataclass(frozen=True)
class VectorRecord:
    id: int
    media_id: int
    t: float
    vector: np.ndarray


@dataclass(frozen=True)
class SearchHit:
    id: int
    media_id: int
    t: float
    score: float


class RWLock:
    """Many readers or one writer. Writers are preferred once waiting."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._waiting_writers = 0

    @contextmanager
    def read(self):
        with self._cond:
            while self._writer or self._waiting_writers:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            self._waiting_writers += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting_writers -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


def default_nlist(n: int) -> int:
    return int(min(4096, max(16, math.ceil(math.sqrt(max(n, 1))))))


def default_nprobe(nlist: int) -> int:
    return min(nlist, max(8, nlist // 16))


def _top_k(scores: np.ndarray, media: np.ndarray, ts: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k best entries under the (score desc, media, t, id) order."""
    n = len(scores)
    if n == 0:
        return np.empty(0, dtype=np.intp)
    if n > k:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((ids[cand], ts[cand], media[cand], -scores[cand]))
    return cand[order[:k]]


class VectorIndex:
    """Exhaustive inner-product index; also the storage layer for :class:`IvfIndex`."""

    def __init__(self, dim: int = DIM):
        self.dim = dim
        self._ids = np.empty(0, dtype=np.int64)
        self._media = np.empty(0, dtype=np.int64)
        self._ts = np.empty(0, dtype=np.float64)
        self._vecs = np.empty((0, dim), dtype=np.float64)
        self._n = 0
        self._id_set: set[int] = set()
        self.lock = RWLock()

    def __len__(self) -> int:
        return self._n

    @property
    def vectors(self) -> np.ndarray:
        return self._vecs[: self._n]

    @property
    def ids(self) -> np.ndarray:
        return self._ids[: self._n]

    @property
    def media_ids(self) -> np.ndarray:
        return self._media[: self._n]

    @property
    def timestamps(self) -> np.ndarray:
        return self._ts[: self._n]

    def _reserve(self, extra: int) -> None:
        need = self._n + extra
        cap = len(self._ids)
        if need <= cap:
            return
        new_cap = max(need, 2 * cap, 1024)
        for name in ("_ids", "_media", "_ts"):
            old = getattr(self, name)
            arr = np.empty(new_cap, dtype=old.dtype)
            arr[: self._n] = old[: self._n]
            setattr(self, name, arr)
        vecs = np.empty((new_cap, self.dim), dtype=np.float64)
        vecs[: self._n] = self._vecs[: self._n]
        self._vecs = vecs

    def insert_batch(self, records: Iterable[VectorRecord]) -> int:
        records = list(records)
        if not records:
            return 0
        return self.insert_arrays(
            [r.id for r in records],
            [r.media_id for r in records],
            [r.t for r in records],
            np.stack([np.asarray(r.vector, dtype=np.float64) for r in records]),
        )

    def insert_arrays(self, ids, media_ids, ts, vectors) -> int:
        ids = np.asarray(ids, dtype=np.int64)
        media_ids = np.asarray(media_ids, dtype=np.int64)
        ts = np.asarray(ts, dtype=np.float64)
        vectors = np.asarray(vectors, dtype=np.float64)
        m = len(ids)
        if vectors.shape != (m, self.dim) or len(media_ids) != m or len(ts) != m:
            raise ValueError(f"inconsistent batch shapes: {m} ids, vectors {vectors.shape}")
        if np.any(ts < 0):
            raise ValueError("timestamps must be non-negative")
        with self.lock.write():
            id_list = ids.tolist()
            dups = {i for i in id_list if i in self._id_set}
            if len(set(id_list)) != m:
                seen: set[int] = set()
                dups |= {i for i in id_list if i in seen or seen.add(i)}
            if dups:
                raise DuplicateIdError(dups)
            self._reserve(m)
            lo, hi = self._n, self._n + m
            self._ids[lo:hi] = ids
            self._media[lo:hi] = media_ids
            self._ts[lo:hi] = ts
            self._vecs[lo:hi] = vectors
            self._n = hi
            self._id_set.update(id_list)
            self._on_insert(lo, hi)
        return m

    def _on_insert(self, lo: int, hi: int) -> None:
        pass

    def delete_media(self, media_id: int) -> int:
        """Drop every record of one media item; returns the number removed."""
        with self.lock.write():
            keep = self._media[: self._n] != media_id
            removed = int(self._n - keep.sum())
            if removed:
                self._compact(keep)
        return removed

    def _compact(self, keep: np.ndarray) -> None:
        gone = self._ids[: self._n][~keep]
        self._id_set.difference_update(gone.tolist())
        n = int(keep.sum())
        self._ids[:n] = self._ids[: self._n][keep]
        self._media[:n] = self._media[: self._n][keep]
        self._ts[:n] = self._ts[: self._n][keep]
        self._vecs[:n] = self._vecs[: self._n][keep]
        self._n = n

    def _hits(self, pos: np.ndarray, scores: np.ndarray) -> list[SearchHit]:
        return [
            SearchHit(int(self._ids[p]), int(self._media[p]), float(self._ts[p]), float(s))
            for p, s in zip(pos, scores)
        ]

    def search_flat(self, q, k: int) -> list[SearchHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(q, dtype=np.float64)
        with self.lock.read():
            n = self._n
            if n == 0:
                return []
            scores = self._vecs[:n] @ q
            pos = _top_k(scores, self._media[:n], self._ts[:n], self._ids[:n], k)
            return self._hits(pos, scores[pos])

    def search(self, q, k: int, nprobe: int | None = None) -> list[SearchHit]:
        return self.search_flat(q, k)

    # -- snapshots ----------------------------------------------------------

    def _payload(self) -> tuple[int, int, list[bytes]]:
        n = self._n
        parts = [
            self._ids[:n].astype("<i8").tobytes(),
            self._media[:n].astype("<i8").tobytes(),
            self._ts[:n].astype("<f8").tobytes(),
            self._vecs[:n].astype("<f8").tobytes(),
        ]
        return _KIND_FLAT, 0, 0, parts

    def save_snapshot(self, path) -> None:
        """Write the index to ``path`` via a temp file and atomic rename."""
        with self.lock.read():
            kind, nlist, nprobe, parts = self._payload()
            header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, kind, self.dim, self._n, nlist, nprobe)
        crc = zlib.crc32(header)
        for p in parts:
            crc = zlib.crc32(p, crc)
        path = os.fspath(path)
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".snap-", dir=d)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(header)
                for p in parts:
                    f.write(p)
                f.write(struct.pack("<I", crc))
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    flush = save_snapshot


def load_snapshot(path) -> VectorIndex:
    """Read a snapshot written by :meth:`VectorIndex.save_snapshot`.

    Returns an :class:`IvfIndex` when the snapshot carries centroids. Raises
    :class:`SnapshotError` on any size, magic or checksum mismatch.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size + 4:
        raise SnapshotError(f"snapshot too short ({len(data)} bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise SnapshotError("snapshot checksum mismatch")
    magic, version, kind, dim, n, nlist, nprobe = _HEADER.unpack_from(body)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError("not an index snapshot")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    expected = _HEADER.size + n * (8 * 3 + 8 * dim) + nlist * 8 * dim + (n * 4 if nlist else 0)
    if len(body) != expected:
        raise SnapshotError(f"snapshot size {len(body)} != expected {expected}")
    off = _HEADER.size

    def take(dtype, count):
        nonlocal off
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    ids = take("<i8", n)
    media = take("<i8", n)
    ts = take("<f8", n)
    vecs = take("<f8", n * dim).reshape(n, dim)
    if kind == _KIND_IVF:
        if nlist:
            centroids = take("<f8", nlist * dim).reshape(nlist, dim).copy()
            assign = take("<i4", n)
        else:
            centroids, assign = None, np.zeros(n, dtype=np.int32)
        idx: VectorIndex = IvfIndex(centroids, nprobe=nprobe or None, dim=dim)
        idx._load_arrays(ids, media, ts, vecs, assign)
    elif kind == _KIND_FLAT:
        idx = VectorIndex(dim)
        idx.insert_arrays(ids, media, ts, vecs)
    else:
        raise SnapshotError(f"unknown index kind {kind}")
    return idx


# -- IVF ------------------------------------------------------------------


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    # squared euclidean distance between unit vectors = 2 - 2<x, c>
    d2 = np.maximum(2.0 - 2.0 * (x @ centers[0]), 0.0)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            pick = min(pick, n - 1)
        centers[j] = x[pick]
        d2 = np.minimum(d2, np.maximum(2.0 - 2.0 * (x @ centers[j]), 0.0))
    return centers


def spherical_kmeans(
    x: np.ndarray, k: int, seed: int = 0, max_iter: int = 25, tol: float = 1e-6
) -> np.ndarray:
    """k-means on the unit sphere with k-means++ seeding; returns unit centroids."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"need at least nlist={k} training vectors, got {len(x)}")
    if k < 1:
        raise ValueError("nlist must be >= 1")
    x = _normalize_rows(x)
    rng = np.random.default_rng(seed)
    if k == 1:
        return _normalize_rows(x.mean(axis=0, keepdims=True))
    centers = _normalize_rows(_kmeanspp(x, k, rng))
    for _ in range(max_iter):
        sims = x @ centers.T
        assign = sims.argmax(axis=1)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x)
        counts = np.bincount(assign, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            # reseed empty cells at the points worst served by their centroid
            worst = np.argsort(sims[np.arange(len(x)), assign], kind="stable")[: len(empty)]
            sums[empty] = x[worst]
        new = _normalize_rows(sums)
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        if shift < tol:
            break
    return centers


class IvfIndex(VectorIndex):
    """Inverted-file index: each record lives in the list of its best centroid.

    An index built without centroids is *untrained*; until :meth:`train` runs,
    ``search_ivf`` scans every record.
    """

    def __init__(self, centroids: np.ndarray | None = None, nprobe: int | None = None, dim: int = DIM):
        super().__init__(dim)
        self.centroids: np.ndarray | None = None
        self._nprobe = nprobe
        self._assign = np.empty(0, dtype=np.int32)
        self._lists: list[np.ndarray] | None = None
        self.trained_size = 0
        if centroids is not None:
            self._set_centroids(np.asarray(centroids, dtype=np.float64))

    def _set_centroids(self, centroids: np.ndarray) -> None:
        if centroids.ndim != 2 or centroids.shape[1] != self.dim or len(centroids) < 1:
            raise ValueError(f"bad centroid array shape {centroids.shape}")
        self.centroids = centroids
        self._lists = None

    @property
    def trained(self) -> bool:
        return self.centroids is not None

    @property
    def nlist(self) -> int:
        return 0 if self.centroids is None else len(self.centroids)

    @property
    def nprobe(self) -> int:
        if not self.trained:
            return 0
        return min(self._nprobe or default_nprobe(self.nlist), self.nlist)

    @nprobe.setter
    def nprobe(self, value: int | None) -> None:
        self._nprobe = value

    def _reserve(self, extra: int) -> None:
        super()._reserve(extra)
        if len(self._assign) < len(self._ids):
            a = np.zeros(len(self._ids), dtype=np.int32)
            a[: self._n] = self._assign[: self._n]
            self._assign = a

    def assign(self, vectors: np.ndarray) -> np.ndarray:
        sims = np.atleast_2d(vectors) @ self.centroids.T
        return sims.argmax(axis=1).astype(np.int32)

    def _on_insert(self, lo: int, hi: int) -> None:
        if self.trained:
            self._assign[lo:hi] = self.assign(self._vecs[lo:hi])
        self._lists = None

    def _compact(self, keep: np.ndarray) -> None:
        a = self._assign[: self._n][keep]
        super()._compact(keep)
        self._assign[: self._n] = a
        self._lists = None

    def _load_arrays(self, ids, media, ts, vecs, assign) -> None:
        n = len(ids)
        self._reserve(n)
        self._ids[:n] = ids
        self._media[:n] = media
        self._ts[:n] = ts
        self._vecs[:n] = vecs
        self._assign[:n] = assign
        self._n = n
        self._id_set = set(self._ids[:n].tolist())
        self._lists = None
        if len(self._id_set) != n:
            raise SnapshotError("snapshot contains duplicate ids")
        self.trained_size = n if self.trained else 0

    def train(self, nlist: int | None = None, seed: int = 0, sample=None, max_train: int = 100_000) -> None:
        """(Re)compute centroids and reassign every record, in place.

        Trains on ``sample`` when given, otherwise on up to ``max_train`` of the
        stored vectors chosen with the same seed.
        """
        with self.lock.read():
            if sample is None:
                vecs = self.vectors
                if len(vecs) > max_train:
                    pick = np.random.default_rng(seed).choice(len(vecs), max_train, replace=False)
                    vecs = vecs[np.sort(pick)]
                sample = vecs.copy()
            nlist = nlist or default_nlist(self._n)
        centroids = spherical_kmeans(sample, nlist, seed=seed)
        with self.lock.write():
            self._set_centroids(centroids)
            self._assign[: self._n] = self.assign(self._vecs[: self._n]) if self._n else []
            self.trained_size = self._n

    def needs_training(self, min_records: int = 256, growth: float = 4.0) -> bool:
        if self._n < min_records:
            return False
        return not self.trained or self._n >= growth * max(self.trained_size, 1)

    def list_sizes(self) -> np.ndarray:
        return np.bincount(self._assign[: self._n], minlength=self.nlist)

    def _inverted_lists(self) -> list[np.ndarray]:
        if self._lists is None:
            a = self._assign[: self._n]
            order = np.argsort(a, kind="stable")
            bounds = np.searchsorted(a[order], np.arange(self.nlist + 1))
            self._lists = [order[bounds[i] : bounds[i + 1]] for i in range(self.nlist)]
        return self._lists

    def search_ivf(self, q, k: int, nprobe: int | None = None) -> list[SearchHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.trained:
            return self.search_flat(q, k)
        nprobe = self.nprobe if nprobe is None else nprobe
        if not 1 <= nprobe <= self.nlist:
            raise ValueError(f"nprobe must be in [1, {self.nlist}], got {nprobe}")
        q = np.asarray(q, dtype=np.float64)
        with self.lock.read():
            if self._n == 0:
                return []
            csims = self.centroids @ q
            if nprobe < self.nlist:
                probe = np.argpartition(-csims, nprobe - 1)[:nprobe]
            else:
                probe = np.arange(self.nlist)
            lists = self._inverted_lists()
            rows = np.concatenate([lists[c] for c in probe])
            if len(rows) == 0:
                return []
            scores = self._vecs[rows] @ q
            pos = _top_k(scores, self._media[rows], self._ts[rows], self._ids[rows], k)
            return self._hits(rows[pos], scores[pos])

    def search(self, q, k: int, nprobe: int | None = None) -> list[SearchHit]:
        return self.search_ivf(q, k, nprobe)

    def _payload(self):
        _, _, _, parts = super()._payload()
        if self.trained:
            parts.append(self.centroids.astype("<f8").tobytes())
            parts.append(self._assign[: self._n].astype("<i4").tobytes())
        return _KIND_IVF, self.nlist, self._nprobe or 0, parts


def train_ivf(vectors, nlist: int, seed: int = 0, nprobe: int | None = None) -> IvfIndex:
    """Train IVF centroids on a sample; the returned index holds no records yet."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) < nlist:
        raise ValueError(f"training sample ({len(vectors)}) smaller than nlist ({nlist})")
    centroids = spherical_kmeans(vectors, nlist, seed=seed)
    return IvfIndex(centroids, nprobe=nprobe, dim=vectors.shape[1])


def search_flat(index: VectorIndex, q, k: int) -> list[SearchHit]:
    return index.search_flat(q, k)


def search_ivf(index: IvfIndex, q, k: int, nprobe: int) -> list[SearchHit]:
    return index.search_ivf(q, k, nprobe)


def recall_at_k(approx: Sequence[SearchHit], exact: Sequence[SearchHit]) -> float:
    if not exact:
        return 1.0
    return len({h.id for h in approx} & {h.id for h in exact}) / len(exact)
