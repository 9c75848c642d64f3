"""Frame sources: a directory of frames plus ``manifest.json``, or the same
layout packed into a zip bundle.

The manifest is ``{"fps": 24, "width": 64, "height": 48, "frame_count": 240}``;
frames are PNG or PPM files whose sorted filenames give playback order.
"""

from __future__ import annotations

import io
import json
import shlex
import subprocess
import zipfile
from pathlib import Path
from typing import Iterator, Sequence

from .imageio import ImageDecodeError, RasterImage, decode_image, encode_png

MANIFEST = "manifest.json"
FRAME_SUFFIXES = (".png", ".ppm")


class FrameSourceError(ValueError):
    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


def _check_manifest(m: dict, names: Sequence[str]) -> float:
    try:
        fps = float(m["fps"])
    except (KeyError, TypeError, ValueError):
        raise FrameSourceError("manifest lacks a numeric fps") from None
    if not fps > 0:
        raise FrameSourceError(f"manifest fps must be positive, got {fps}")
    count = m.get("frame_count")
    if count is not None and int(count) != len(names):
        raise FrameSourceError(f"manifest frame_count {count} but {len(names)} frame files")
    if not names:
        raise FrameSourceError("no frames")
    return fps


class FrameSource:
    fps: float
    names: list[str]

    def __len__(self) -> int:
        return len(self.names)

    def frame_bytes(self, i: int) -> bytes:
        raise NotImplementedError

    def frame(self, i: int) -> RasterImage:
        try:
            return decode_image(self.frame_bytes(i))
        except ImageDecodeError as exc:
            raise FrameSourceError(str(exc), frame=i) from exc

    def __iter__(self) -> Iterator[RasterImage]:
        for i in range(len(self)):
            yield self.frame(i)

    def nearest_index(self, t: float) -> int:
        return min(max(int(round(t * self.fps)), 0), len(self) - 1)


class FrameDirectory(FrameSource):
    def __init__(self, path):
        self.path = Path(path)
        try:
            manifest = json.loads((self.path / MANIFEST).read_text())
        except (OSError, ValueError) as exc:
            raise FrameSourceError(f"cannot read manifest in {self.path}: {exc}") from exc
        self.names = sorted(p.name for p in self.path.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
        self.fps = _check_manifest(manifest, self.names)
        self.manifest = manifest

    def frame_bytes(self, i: int) -> bytes:
        return (self.path / self.names[i]).read_bytes()


class FrameBundle(FrameSource):
    """Frames read from a zip (bytes or a path) laid out like a :class:`FrameDirectory`."""

    def __init__(self, data):
        try:
            self._zip = zipfile.ZipFile(io.BytesIO(data) if isinstance(data, (bytes, bytearray)) else data)
            manifest = json.loads(self._zip.read(MANIFEST))
        except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
            raise FrameSourceError(f"not a frame bundle: {exc}") from exc
        self.names = sorted(
            n for n in self._zip.namelist() if n != MANIFEST and n.lower().endswith(FRAME_SUFFIXES)
        )
        self.fps = _check_manifest(manifest, self.names)
        self.manifest = manifest

    def frame_bytes(self, i: int) -> bytes:
        return self._zip.read(self.names[i])


def is_bundle(data: bytes) -> bool:
    if not zipfile.is_zipfile(io.BytesIO(data)):
        return False
    with zipfile.ZipFile(io.BytesIO(data)) as z:
        return MANIFEST in z.namelist()


def make_bundle(frames: Sequence[RasterImage], fps: float) -> bytes:
    """Pack frames as PNGs with a manifest into zip bytes."""
    if not frames:
        raise ValueError("no frames")
    buf = io.BytesIO()
    manifest = {
        "fps": fps,
        "width": frames[0].width,
        "height": frames[0].height,
        "frame_count": len(frames),
    }
    # PNGs are already deflated
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as z:
        z.writestr(MANIFEST, json.dumps(manifest))
        for i, f in enumerate(frames):
            z.writestr(f"{i:06d}.png", encode_png(f))
    return buf.getvalue()


def bundle_directory(src: FrameDirectory) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as z:
        z.writestr(MANIFEST, json.dumps(src.manifest))
        for name in src.names:
            z.write(src.path / name, name)
    return buf.getvalue()


def write_frame_directory(frames: Sequence[RasterImage], fps: float, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        (path / f"{i:06d}.png").write_bytes(encode_png(f))
    manifest = {"fps": fps, "width": frames[0].width, "height": frames[0].height, "frame_count": len(frames)}
    (path / MANIFEST).write_text(json.dumps(manifest))
    return path


def run_decoder(cmd_template: str, input_path, outdir) -> FrameDirectory:
    """Run an external decoder that must leave frames + manifest in ``outdir``.

    ``cmd_template`` is formatted with ``{input}`` and ``{outdir}`` (shell-quoted).
    """
    cmd = cmd_template.format(input=shlex.quote(str(input_path)), outdir=shlex.quote(str(outdir)))
    proc = subprocess.run(cmd, shell=True, capture_output=True)
    if proc.returncode != 0:
        raise FrameSourceError(
            f"decoder exited {proc.returncode}: {proc.stderr.decode(errors='replace')[-500:]}"
        )
    return FrameDirectory(outdir)
