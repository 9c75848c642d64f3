import pytest

from shotit.config import Config


def test_defaults():
    c = Config()
    assert c.theta == 0.35 and c.clip_window_s == 5.0 and c.search_mode == "ivf"


def test_file_and_env_override(tmp_path):
    p = tmp_path / "shotit.conf"
    p.write_text("# comment\nnlist = 64\ntheta = 0.5   # inline\nstore_backend = s3\n"
                 "store_path_or_endpoint = http://minio:9000/bucket\n")
    c = Config.load(p, env={"SHOTIT_NLIST": "128", "SHOTIT_SEARCH_MODE": "flat"})
    assert c.nlist == 128 and c.theta == 0.5 and c.search_mode == "flat"
    assert c.store_path_or_endpoint == "http://minio:9000/bucket"


def test_env_only():
    assert Config.load(None, env={"SHOTIT_CLIP_WINDOW_S": "2.5"}).clip_window_s == 2.5


@pytest.mark.parametrize("text", ["bogus = 1\n", "theta = 0\n", "search_mode = hnsw\n", "nlist = -1\n"])
def test_invalid(tmp_path, text):
    p = tmp_path / "c"
    p.write_text(text)
    with pytest.raises(ValueError):
        Config.load(p, env={})
