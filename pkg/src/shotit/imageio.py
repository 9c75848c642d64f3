"""Raster container plus PNG / binary PPM codecs."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageDecodeError(ValueError):
    """Raised when bytes cannot be decoded into an RGB raster."""


@dataclass(frozen=True, eq=False)
class RasterImage:
    """An 8-bit RGB image stored as a ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {px.dtype}")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def from_array(cls, arr) -> "RasterImage":
        arr = np.asarray(arr)
        if arr.dtype != np.uint8:
            arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
        return cls(np.ascontiguousarray(arr))

    @classmethod
    def solid(cls, width: int, height: int, rgb=(0, 0, 0)) -> "RasterImage":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[...] = np.asarray(rgb, dtype=np.uint8)
        return cls(px)

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


def decode_image(data: bytes) -> RasterImage:
    """Decode PNG or binary PPM (P6, maxval 255) bytes.

    Alpha, when present, is composited over black.
    """
    if data[:2] == b"P6":
        return _decode_ppm(data)
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.format != "PNG":
                raise ImageDecodeError(f"unsupported image format {im.format!r}")
            if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
                rgba = np.asarray(im.convert("RGBA"), dtype=np.uint16)
                alpha = rgba[..., 3:4]
                rgb = (rgba[..., :3] * alpha + 127) // 255
                return RasterImage(rgb.astype(np.uint8))
            return RasterImage(np.asarray(im.convert("RGB"), dtype=np.uint8).copy())
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode image: {exc}") from exc


def _decode_ppm(data: bytes) -> RasterImage:
    # header: magic, width, height, maxval, separated by whitespace; '#' comments allowed
    fields = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageDecodeError("truncated PPM header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError as exc:
            raise ImageDecodeError(f"bad PPM header field {data[start:pos]!r}") from exc
    pos += 1  # single whitespace byte before raster
    width, height, maxval = fields
    if maxval != 255:
        raise ImageDecodeError(f"only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise ImageDecodeError("PPM dimensions must be positive")
    need = width * height * 3
    raster = data[pos : pos + need]
    if len(raster) != need:
        raise ImageDecodeError(f"PPM raster truncated: {len(raster)} of {need} bytes")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()
    return RasterImage(px)


def encode_ppm(img: RasterImage) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def encode_png(img: RasterImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img.pixels).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def read_image(path) -> RasterImage:
    with open(path, "rb") as f:
        return decode_image(f.read())
