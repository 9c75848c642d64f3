import numpy as np
import pytest

from shotit.imageio import RasterImage

SAMPLE_HASH = (
    "3ef d3c 2cc 7b6 9dd 2b6 549 852 582 dfd c5e c01 6af ccf 46f 1a5 5b 4a6 f8b 6d2 "
    "6a9 48d 2a1 59d ed5 b78 ac3 75 44d c15 cb3 954 1d9 44f 3a3 15b 44d 331 603 43d "
    "fb ef1 4e7 46 e92 ec6 848 c7c 8e8 8df 441 39a aa 6d6 911 9f9 d6f c2c 942 3b3 "
    "5b2 94c 521 a4c 6ac b38 7a9 584 d2a 5e3 c30 da1 733 12c fc3 dbd 152 3fa 15a b81 "
    "c24 cb beb e21 357 a0e 48e 300 19 827 2c6 b67 651 dba 9a4 b4b 85 d75 f78 c30"
)

SAMPLE_COEFFS = [
    1007, 3388, 716, 1974, 2525, 694, 1353, 2130, 1410, 3581, 3166, 3073, 1711, 3279, 1135,
    421, 91, 1190, 3979, 1746, 1705, 1165, 673, 1437, 3797, 2936, 2755, 117, 1101, 3093,
    3251, 2388, 473, 1103, 931, 347, 1101, 817, 1539, 1085, 251, 3825, 1255, 70, 3730,
    3782, 2120, 3196, 2280, 2271, 1089, 922, 170, 1750, 2321, 2553, 3439, 3116, 2370, 947,
    1458, 2380, 1313, 2636, 1708, 2872, 1961, 1412, 3370, 1507, 3120, 3489, 1843, 300, 4035,
    3517, 338, 1018, 346, 2945, 3108, 203, 3051, 3617, 855, 2574, 1166, 768, 25, 2087, 710,
    2919, 1617, 3514, 2468, 2891, 133, 3445, 3960, 3120,
]

# reference leading and trailing components of the normalized sample vector
SAMPLE_HEAD = [0.044185601028731133, 0.1486601949208948, 0.031416971535820744,
               0.0866160639828354, 0.11079309096082036]
SAMPLE_TAIL = [0.1511612666772381, 0.17375866938805887, 0.13690076982089486]
SAMPLE_TAIL6 = [0.10829201920447709, 0.1268526043436561, 0.0058358340981343] + SAMPLE_TAIL


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, width=64, height=64) -> RasterImage:
    return RasterImage(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


def build_corpus(root, movies=2, seconds=10.0, fps=24, **config):
    """Index synthetic movies through the real pipeline; returns a SearchService."""
    from shotit.catalog import Catalog
    from shotit.config import Config
    from shotit.frames import make_bundle
    from shotit.objectstore import LocalObjectStore
    from shotit.pipeline import Pipeline, RunReport
    from shotit.service import SearchService
    from shotit.synth import movie_frames
    from shotit.vecindex import IvfIndex

    cfg = Config(
        incoming_dir=str(root / "incoming"),
        store_path_or_endpoint=str(root / "store"),
        index_path=str(root / "index.snap"),
        catalog_dir=str(root / "catalog"),
        **config,
    )
    store = LocalObjectStore(cfg.store_path_or_endpoint)
    catalog = Catalog(cfg.catalog_dir, fsync=False)
    index = IvfIndex()
    frames = {}
    for i in range(movies):
        frames[i] = movie_frames(seconds=seconds, fps=fps, seed=100 + i)
        key = f"media/movie{i}.zip"
        store.put(key, make_bundle(frames[i], fps))
        catalog.create_media(f"/incoming/movie{i}.zip", key)
    pipe = Pipeline(store, catalog, index, snapshot_path=cfg.index_path)
    report = RunReport()
    pipe.hash_pending(report)
    pipe.load_pending(report)
    pipe.finish(report)
    assert not report.failed, report.failed
    return SearchService(index, catalog, store, cfg), frames


# acceptance verdict lines, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
