"""Command line: ``shotit index|search|serve|status|retry|bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time
from pathlib import Path

import numpy as np

from . import bench as benchmod
from .catalog import Catalog
from .config import Config
from .objectstore import open_store
from .pipeline import Pipeline, RunReport
from .service import SearchRequest, SearchService, ServiceError
from .synth import gaussian_mixture, mixture_queries
from .vecindex import IvfIndex, default_nlist, load_snapshot, train_ivf

log = logging.getLogger("shotit")


class Runtime:
    """The persistent components named by a config."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.store = open_store(cfg.store_backend, cfg.store_path_or_endpoint)
        self.catalog = Catalog(cfg.catalog_dir)
        path = Path(cfg.index_path)
        self.index = load_snapshot(path) if path.exists() else IvfIndex(nprobe=cfg.nprobe or None)
        if isinstance(self.index, IvfIndex) and cfg.nprobe:
            self.index.nprobe = cfg.nprobe

    def pipeline(self, incoming_dir=None, poll_interval=None) -> Pipeline:
        return Pipeline(
            self.store,
            self.catalog,
            self.index,
            incoming_dir=incoming_dir,
            decoder_cmd=self.cfg.decoder_cmd or None,
            poll_interval=self.cfg.poll_interval if poll_interval is None else poll_interval,
            snapshot_path=self.cfg.index_path,
            nlist=self.cfg.nlist or None,
        )

    def service(self) -> SearchService:
        return SearchService(self.index, self.catalog, self.store, self.cfg)

    def close(self):
        self.catalog.close()


def _merge(total: RunReport, part: RunReport) -> None:
    total.staged += part.staged
    total.hashed += part.hashed
    total.loaded.update(part.loaded)
    total.failed.update(part.failed)


def cmd_index(rt: Runtime, args) -> int:
    incoming = Path(args.dir)
    pipe = rt.pipeline(incoming, args.poll_interval)
    if args.watch:
        stop = threading.Event()
        try:
            pipe.run_forever(stop)
        except KeyboardInterrupt:
            stop.set()
        return 0
    total = pipe.retry()
    # keep polling until the directory drains or stops changing
    idle = 0
    while idle < 2:
        time.sleep(pipe.watcher.interval)
        part = pipe.run_once()
        _merge(total, part)
        remaining = [p for p in incoming.rglob("*") if p.is_file() and not p.name.startswith(".")]
        idle = 0 if part.staged or part.loaded else idle + 1
        if not remaining and not part.staged:
            break
    print(f"staged={len(total.staged)} hashed={len(total.hashed)} "
          f"loaded={len(total.loaded)} vectors={sum(total.loaded.values())} failed={len(total.failed)}")
    for mid, err in total.failed.items():
        print(f"failed\t{mid}\t{err}", file=sys.stderr)
    return 1 if total.failed else 0


def cmd_retry(rt: Runtime, args) -> int:
    report = rt.pipeline().retry()
    print(f"hashed={len(report.hashed)} loaded={len(report.loaded)} failed={len(report.failed)}")
    return 1 if report.failed else 0


def cmd_search(rt: Runtime, args) -> int:
    data = Path(args.image).read_bytes()
    try:
        resp = rt.service().handle_search(
            SearchRequest(data, cut_borders=not args.no_cut_borders, top_k=args.top_k)
        )
    except ServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(resp.to_json(), indent=2))
        return 0
    print("rank\tmedia_id\tfilename\tat\tfrom\tto\tsimilarity")
    for i, r in enumerate(resp.results, 1):
        print(f"{i}\t{r.media_id}\t{r.filename}\t{r.at:.3f}\t{r.start:.3f}\t{r.end:.3f}\t{r.similarity:.6f}")
    return 0


def cmd_status(rt: Runtime, args) -> int:
    print(json.dumps(rt.service().status(), indent=2))
    return 0


def cmd_serve(rt: Runtime, args) -> int:
    from .api import make_server

    host, _, port = args.addr.rpartition(":")
    server = make_server(rt.service(), host or "127.0.0.1", int(port))
    stop = threading.Event()
    worker = None
    incoming = Path(rt.cfg.incoming_dir)
    if not args.no_watch and incoming.is_dir():
        pipe = rt.pipeline(incoming)
        worker = threading.Thread(target=pipe.run_forever, args=(stop,), name="shotit-pipeline", daemon=True)
        worker.start()
    log.info("serving on http://%s:%s", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        server.server_close()
        if worker:
            worker.join(timeout=10)
    return 0


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    vectors, _ = gaussian_mixture(args.n, n_clusters=args.clusters, seed=args.seed)
    queries = mixture_queries(args.queries, n_clusters=args.clusters, seed=args.seed, query_seed=args.seed + 1)
    extra = {}
    if args.dim_check:
        extra["dim_check"] = benchmod.check_dims(vectors)
        if not extra["dim_check"]["ok"]:
            print(f"dimension check failed: {extra['dim_check']}", file=sys.stderr)
            return 1
    nlist = args.nlist or default_nlist(args.n)
    index = train_ivf(vectors, nlist, seed=args.seed, nprobe=args.nprobe or None)
    ids = np.arange(args.n)
    index.insert_arrays(ids, ids // 1000, (ids % 1000) / 24.0, vectors)
    build = time.perf_counter() - t0
    dataset = f"mixture{args.clusters}-n{args.n}"
    reports = []
    latencies = {}
    for engine in ("flat", "ivf"):
        rep, lat = benchmod.run_search_bench(
            index, queries, k=args.k, engine=engine, nprobe=args.nprobe or None,
            dataset=dataset, build_time_s=build,
        )
        rep.extra.update(extra)
        if args.concurrency > 1:
            rep.throughput_qps = benchmod.run_throughput(
                index, queries, args.k, args.concurrency, engine, args.nprobe or None
            )
        reports.append(rep)
        latencies[engine] = lat
    benchmod.write_reports(reports, args.out)
    print("engine\tn\tk\tnlist\tnprobe\tp50_ms\tp95_ms\tp99_ms\trecall")
    for r in reports:
        print(f"{r.engine}\t{r.dataset_size}\t{r.k}\t{r.nlist or '-'}\t{r.nprobe or '-'}\t"
              f"{r.p50_ms:.3f}\t{r.p95_ms:.3f}\t{r.p99_ms:.3f}\t{r.recall:.4f}")
    if not args.no_figures:
        sweep = benchmod.nprobe_sweep(index, queries[: min(len(queries), 100)], args.k,
                                      benchmod.default_probes(index.nlist))
        for p in benchmod.render_figures(args.out, latencies, sweep):
            print(f"figure\t{p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shotit", description="Screenshot-to-video-timestamp search.")
    ap.add_argument("--config", help="key = value config file (SHOTIT_* env vars override)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="ingest media files from a directory")
    p.add_argument("dir")
    p.add_argument("--watch", action="store_true", help="keep watching instead of draining once")
    p.add_argument("--poll-interval", type=float, default=None)

    sub.add_parser("retry", help="resume media stuck in HASHING or LOADING")

    p = sub.add_parser("search", help="find the video and timestamp of a screenshot")
    p.add_argument("image")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--no-cut-borders", action="store_true")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("serve", help="run the HTTP API (and the ingest workers)")
    p.add_argument("--addr", default="127.0.0.1:8080")
    p.add_argument("--no-watch", action="store_true")

    sub.add_parser("status", help="catalog and index summary")

    p = sub.add_parser("bench", help="latency / recall benchmark on synthetic vectors")
    p.add_argument("--n", type=int, default=55_677)
    p.add_argument("--dim-check", action="store_true", help="verify 100-d unit vectors first")
    p.add_argument("--nlist", type=int, default=0)
    p.add_argument("--nprobe", type=int, default=0)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--clusters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", default="report.jsonl")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command == "bench":
        return cmd_bench(args)
    cfg = Config.load(args.config)
    rt = Runtime(cfg)
    try:
        return {
            "index": cmd_index,
            "retry": cmd_retry,
            "search": cmd_search,
            "status": cmd_status,
            "serve": cmd_serve,
        }[args.command](rt, args)
    finally:
        rt.close()


if __name__ == "__main__":
    sys.exit(main())
