"""Key-value configuration with ``SHOTIT_*`` environment overrides.

File syntax is ``key = value`` per line; ``#`` starts a comment.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

ENV_PREFIX = "SHOTIT_"


@dataclass
class Config:
    incoming_dir: str = "data/incoming"
    store_backend: str = "local"
    store_path_or_endpoint: str = "data/store"
    index_path: str = "data/index.snap"
    catalog_dir: str = "data/catalog"
    nlist: int = 0  # 0 = choose from record count
    nprobe: int = 0  # 0 = choose from nlist
    theta: float = 0.35
    clip_window_s: float = 5.0
    clipper_cmd: str = ""
    decoder_cmd: str = ""
    media_base_url: str = "http://127.0.0.1:8080"
    search_mode: str = "ivf"
    poll_interval: float = 2.0

    @classmethod
    def load(cls, path=None, env=None) -> "Config":
        env = os.environ if env is None else env
        values: dict[str, str] = {}
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
            parser.read_string("[shotit]\n" + Path(path).read_text())
            values.update(parser["shotit"])
        known = {f.name: f for f in dataclasses.fields(cls)}
        for key in list(values):
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
        for name in known:
            v = env.get(ENV_PREFIX + name.upper())
            if v is not None:
                values[name] = v
        kwargs = {}
        for name, raw in values.items():
            ftype = known[name].type
            if ftype in ("int", int):
                kwargs[name] = int(raw)
            elif ftype in ("float", float):
                kwargs[name] = float(raw)
            else:
                kwargs[name] = raw
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.search_mode not in ("ivf", "flat"):
            raise ValueError(f"search_mode must be ivf or flat, got {self.search_mode!r}")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not self.clip_window_s > 0:
            raise ValueError("clip_window_s must be positive")
        if self.nlist < 0 or self.nprobe < 0:
            raise ValueError("nlist/nprobe must be non-negative")
