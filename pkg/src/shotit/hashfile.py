"""Per-frame hash timelines and their gzip-compressed XML file form.

File layout::

    <hashes media="..." fps="24.0">
      <frame t="0.0" hash="3ef d3c ..."/>
      ...
    </hashes>

Timestamps and fps are written with ``repr`` so a read after write restores
the exact floats.
"""

from __future__ import annotations

import gzip
import io
import os
import xml.etree.ElementTree as ET
import zlib
from dataclasses import dataclass, field

from .descriptor import HashParseError, decode_hash, encode_hash

Hash = tuple[int, ...]


class HashFileError(ValueError):
    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


@dataclass
class HashTimeline:
    fps: float
    entries: list[tuple[float, Hash]] = field(default_factory=list)
    media: str = ""

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        for i in range(1, len(self.entries)):
            if not self.entries[i][0] > self.entries[i - 1][0]:
                raise ValueError(f"timestamps not strictly increasing at entry {i}")

    def __len__(self) -> int:
        return len(self.entries)


def dedup_timeline(tl: HashTimeline, window: float = 2.0) -> HashTimeline:
    """Collapse repeats of an identical hash seen less than ``window`` seconds ago.

    An entry is dropped iff the same hash was *retained* strictly within the
    preceding window; an exact ``window`` gap keeps it.
    """
    last_kept: dict[Hash, float] = {}
    out = []
    for t, h in tl.entries:
        prev = last_kept.get(h)
        if prev is not None and t - prev < window:
            continue
        last_kept[h] = t
        out.append((t, h))
    return HashTimeline(tl.fps, out, tl.media)


def write_hashfile(tl: HashTimeline, dest) -> None:
    """Write ``tl`` as gzip XML to a path or a binary file object."""
    root = ET.Element("hashes", media=tl.media, fps=repr(float(tl.fps)))
    for t, h in tl.entries:
        ET.SubElement(root, "frame", t=repr(float(t)), hash=encode_hash(h))
    xml = ET.tostring(root, encoding="utf-8", xml_declaration=True)
    if isinstance(dest, (str, os.PathLike)):
        with gzip.open(dest, "wb") as f:
            f.write(xml)
    else:
        with gzip.GzipFile(fileobj=dest, mode="wb", mtime=0) as f:
            f.write(xml)


def hashfile_bytes(tl: HashTimeline) -> bytes:
    buf = io.BytesIO()
    write_hashfile(tl, buf)
    return buf.getvalue()


def read_hashfile(src) -> HashTimeline:
    """Read a timeline from a path, raw bytes, or a binary file object."""
    try:
        if isinstance(src, (bytes, bytearray)):
            raw = gzip.decompress(bytes(src))
        elif isinstance(src, (str, os.PathLike)):
            with gzip.open(src, "rb") as f:
                raw = f.read()
        else:
            with gzip.GzipFile(fileobj=src, mode="rb") as f:
                raw = f.read()
    except (OSError, EOFError, zlib.error) as exc:
        raise HashFileError(f"bad gzip stream: {exc}") from exc
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        raise HashFileError(f"malformed XML at line {exc.position[0]}, column {exc.position[1]}") from exc
    if root.tag != "hashes":
        raise HashFileError(f"unexpected root element <{root.tag}>")
    try:
        fps = float(root.get("fps", ""))
    except ValueError:
        raise HashFileError(f"bad fps attribute {root.get('fps')!r}") from None
    entries = []
    for i, el in enumerate(root.iter("frame")):
        try:
            t = float(el.get("t", ""))
        except ValueError:
            raise HashFileError(f"bad timestamp {el.get('t')!r}", frame=i) from None
        try:
            h = decode_hash(el.get("hash", ""))
        except HashParseError as exc:
            raise HashFileError(str(exc), frame=i) from exc
        entries.append((t, h))
    try:
        return HashTimeline(fps, entries, root.get("media", ""))
    except ValueError as exc:
        raise HashFileError(str(exc)) from exc
