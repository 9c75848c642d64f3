"""Search benchmarks and the Amdahl speedup model.

Reports are JSON lines, one object per (engine, dataset, k); ``render_figures``
draws the latency distribution and the recall/latency trade-off over nprobe
next to the report file.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .vecindex import IvfIndex, VectorIndex, recall_at_k


def amdahl_speedup(alpha: float, k: float) -> float:
    """Overall speedup when a fraction ``alpha`` of run time is made ``k`` times faster."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    return 1.0 / ((1.0 - alpha) + alpha / k)


@dataclass(frozen=True)
class SpeedupModel:
    alpha: float
    k: float
    t_old: float
    t_new: float
    s: float

    @classmethod
    def project(cls, t_old: float, alpha: float, k: float) -> "SpeedupModel":
        s = amdahl_speedup(alpha, k)
        return cls(alpha, k, t_old, t_old * ((1.0 - alpha) + alpha / k), s)


@dataclass
class BenchReport:
    engine: str
    dataset: str
    dataset_size: int
    query_count: int
    k: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    mean_ms: float
    recall: float
    build_time_s: float = 0.0
    nlist: int | None = None
    nprobe: int | None = None
    throughput_qps: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def percentiles_ms(latencies_s: Sequence[float]) -> tuple[float, float, float]:
    ms = np.asarray(latencies_s) * 1000.0
    p50, p95, p99 = np.percentile(ms, [50, 95, 99])
    return float(p50), float(p95), float(p99)


def run_search_bench(
    index: VectorIndex,
    queries: np.ndarray,
    k: int = 10,
    engine: str = "ivf",
    nprobe: int | None = None,
    dataset: str = "synthetic",
    warmup: int = 10,
    min_queries: int = 100,
    build_time_s: float = 0.0,
) -> tuple[BenchReport, np.ndarray]:
    """Time queries one at a time and score recall@k against the flat oracle.

    Queries are cycled if fewer than ``min_queries`` are given. Returns the
    report and the raw per-query latencies in seconds.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if len(index) == 0 or len(queries) == 0:
        raise ValueError("benchmark needs a non-empty index and query set")
    if engine == "ivf":
        if not isinstance(index, IvfIndex):
            raise ValueError("ivf engine needs an IvfIndex")
        search = lambda q: index.search_ivf(q, k, nprobe)  # noqa: E731
    elif engine == "flat":
        search = lambda q: index.search_flat(q, k)  # noqa: E731
    else:
        raise ValueError(f"unknown engine {engine!r}")
    total = max(min_queries, len(queries))
    for i in range(warmup):
        search(queries[i % len(queries)])
    lat = np.empty(total)
    recalls = np.empty(total)
    for i in range(total):
        q = queries[i % len(queries)]
        t0 = time.perf_counter()
        hits = search(q)
        lat[i] = time.perf_counter() - t0
        recalls[i] = recall_at_k(hits, index.search_flat(q, k))
    p50, p95, p99 = percentiles_ms(lat)
    report = BenchReport(
        engine=engine,
        dataset=dataset,
        dataset_size=len(index),
        query_count=total,
        k=k,
        p50_ms=p50,
        p95_ms=p95,
        p99_ms=p99,
        mean_ms=float(lat.mean() * 1000),
        recall=float(recalls.mean()),
        build_time_s=build_time_s,
        nlist=index.nlist if isinstance(index, IvfIndex) and engine == "ivf" else None,
        nprobe=(nprobe or index.nprobe) if isinstance(index, IvfIndex) and engine == "ivf" else None,
    )
    return report, lat


def run_throughput(index: VectorIndex, queries: np.ndarray, k: int = 10, workers: int = 4,
                   engine: str = "ivf", nprobe: int | None = None) -> float:
    """Aggregate queries/second with ``workers`` concurrent searchers."""
    if engine == "ivf":
        fn = lambda q: index.search_ivf(q, k, nprobe)  # noqa: E731
    else:
        fn = lambda q: index.search_flat(q, k)  # noqa: E731
    t0 = time.perf_counter()
    with ThreadPoolExecutor(workers) as pool:
        list(pool.map(fn, queries))
    return len(queries) / (time.perf_counter() - t0)


def nprobe_sweep(index: IvfIndex, queries: np.ndarray, k: int, probes: Sequence[int]) -> list[dict]:
    """Recall and median latency at each nprobe, for the trade-off figure."""
    exact = [index.search_flat(q, k) for q in queries]
    rows = []
    for p in probes:
        if not 1 <= p <= index.nlist:
            continue
        lat = []
        rec = []
        for q, ex in zip(queries, exact):
            t0 = time.perf_counter()
            hits = index.search_ivf(q, k, p)
            lat.append(time.perf_counter() - t0)
            rec.append(recall_at_k(hits, ex))
        rows.append({"nprobe": p, "recall": float(np.mean(rec)), "p50_ms": float(np.median(lat) * 1000)})
    return rows


def write_reports(reports: Sequence[BenchReport], path) -> None:
    with open(path, "w") as f:
        for r in reports:
            f.write(json.dumps(r.to_json()) + "\n")


def read_reports(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def render_figures(out_path, latencies: dict[str, np.ndarray], sweep: list[dict] | None = None) -> list[Path]:
    """Save ``<stem>.latency.png`` and, given a sweep, ``<stem>.nprobe.png``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_path = Path(out_path)
    stem = out_path.with_suffix("")
    written = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, lat in latencies.items():
        ms = np.asarray(lat) * 1000
        ax.hist(ms, bins=40, alpha=0.6, label=f"{name} (p99 {np.percentile(ms, 99):.2f} ms)")
    ax.set_xlabel("query latency (ms)")
    ax.set_ylabel("queries")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = Path(f"{stem}.latency.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    if sweep:
        fig, ax1 = plt.subplots(figsize=(6, 3.5))
        probes = [r["nprobe"] for r in sweep]
        ax1.plot(probes, [r["recall"] for r in sweep], "o-", color="C0")
        ax1.set_xscale("log", base=2)
        ax1.set_xlabel("nprobe")
        ax1.set_ylabel("recall@k", color="C0")
        ax2 = ax1.twinx()
        ax2.plot(probes, [r["p50_ms"] for r in sweep], "s--", color="C1")
        ax2.set_ylabel("median latency (ms)", color="C1")
        fig.tight_layout()
        p = Path(f"{stem}.nprobe.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)
    return written


def check_dims(vectors: np.ndarray, dim: int = 100, tol: float = 1e-9) -> dict:
    """Confirm every vector has ``dim`` components and unit L2 norm."""
    vectors = np.atleast_2d(vectors)
    norms = np.linalg.norm(vectors, axis=1)
    worst = float(np.max(np.abs(norms - 1.0))) if len(norms) else 0.0
    ok = vectors.shape[1] == dim and worst <= tol
    return {"dim": int(vectors.shape[1]), "expected_dim": dim, "max_norm_error": worst, "ok": bool(ok)}


def default_probes(nlist: int) -> list[int]:
    return [p for p in (2 ** i for i in range(int(math.log2(max(nlist, 1))) + 1))] + (
        [nlist] if nlist & (nlist - 1) else []
    )
