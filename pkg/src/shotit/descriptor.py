"""Color Layout descriptor: 8x8 dominant-color grid, DCT, zigzag, 12-bit quantization.

The descriptor of a frame is 100 integers in ``[0, 4095]``: the first 64 zigzag
coefficients of the luma DCT followed by the first 18 of each chroma DCT. Its
textual form (the "hash string") is the coefficients written as space-separated
lowercase hex words.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .imageio import RasterImage

GRID = 8
N_Y = 64
N_CHROMA = 18
HASH_LEN = N_Y + 2 * N_CHROMA
QMAX = 4095
AC_OFFSET = 2048
DC_MAX = 8 * 255

# BT.601 full-range RGB -> YCbCr
_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC_OFFSET = np.array([0.0, 128.0, 128.0])
_LUMA = _YCC[0]
_HEX_WORD = re.compile(r"[0-9a-fA-F]+")


class DescriptorError(ValueError):
    pass


class HashParseError(ValueError):
    """A hash string failed to parse; ``word`` is the offending word index (or None)."""

    def __init__(self, message: str, word: int | None = None):
        super().__init__(message)
        self.word = word


@dataclass(frozen=True)
class BlockGrid:
    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray


class CropRect(NamedTuple):
    x: int
    y: int
    width: int
    height: int


def _block_edges(n: int) -> np.ndarray:
    return np.array([(i * n) // GRID for i in range(GRID)], dtype=np.intp)


def to_block_grid(img: RasterImage) -> BlockGrid:
    """Average each of the 8x8 sub-images and convert the means to YCbCr."""
    h, w = img.height, img.width
    if w < GRID or h < GRID:
        raise DescriptorError(f"image must be at least 8x8, got {w}x{h}")
    px = img.pixels.astype(np.float64)
    rows = _block_edges(h)
    cols = _block_edges(w)
    sums = np.add.reduceat(np.add.reduceat(px, rows, axis=0), cols, axis=1)
    rh = np.diff(np.append(rows, h))
    cw = np.diff(np.append(cols, w))
    means = sums / (rh[:, None] * cw[None, :])[..., None]
    ycc = means @ _YCC.T + _YCC_OFFSET
    return BlockGrid(y=ycc[..., 0], cb=ycc[..., 1], cr=ycc[..., 2])


def _dct_matrix() -> np.ndarray:
    m = np.empty((GRID, GRID))
    for u in range(GRID):
        a = math.sqrt(1 / GRID) if u == 0 else math.sqrt(2 / GRID)
        for x in range(GRID):
            m[u, x] = a * math.cos((2 * x + 1) * u * math.pi / (2 * GRID))
    return m


_DCT = _dct_matrix()


def dct2d_8x8(block) -> np.ndarray:
    """Orthonormal 2-D DCT-II of an 8x8 block."""
    b = np.asarray(block, dtype=np.float64)
    if b.shape != (GRID, GRID):
        raise ValueError(f"expected 8x8 block, got {b.shape}")
    return _DCT @ b @ _DCT.T


def _zigzag_order() -> list[tuple[int, int]]:
    order = []
    for s in range(2 * GRID - 1):
        diag = [(r, s - r) for r in range(GRID) if 0 <= s - r < GRID]
        # even anti-diagonals run bottom-left -> top-right
        if s % 2 == 0:
            diag.reverse()
        order.extend(diag)
    return order


ZIGZAG = _zigzag_order()
_ZZ_ROWS = np.array([r for r, _ in ZIGZAG])
_ZZ_COLS = np.array([c for _, c in ZIGZAG])


def zigzag_scan(m) -> np.ndarray:
    m = np.asarray(m)
    if m.shape != (GRID, GRID):
        raise ValueError(f"expected 8x8 matrix, got {m.shape}")
    return m[_ZZ_ROWS, _ZZ_COLS]


def inverse_zigzag(seq) -> np.ndarray:
    seq = np.asarray(seq)
    out = np.empty((GRID, GRID), dtype=seq.dtype)
    out[_ZZ_ROWS, _ZZ_COLS] = seq
    return out


def _quantize(coeffs: np.ndarray) -> np.ndarray:
    q = np.empty(coeffs.shape, dtype=np.int64)
    q[0] = np.rint(coeffs[0] * QMAX / DC_MAX)
    q[1:] = np.rint(coeffs[1:] / 2) + AC_OFFSET
    return np.clip(q, 0, QMAX)


def compute_descriptor(img: RasterImage) -> tuple[int, ...]:
    """Color Layout hash of ``img`` as a tuple of 100 ints in [0, 4095]."""
    grid = to_block_grid(img)
    y = _quantize(zigzag_scan(dct2d_8x8(grid.y)))
    cb = _quantize(zigzag_scan(dct2d_8x8(grid.cb))[:N_CHROMA])
    cr = _quantize(zigzag_scan(dct2d_8x8(grid.cr))[:N_CHROMA])
    return tuple(int(v) for v in np.concatenate([y, cb, cr]))


def encode_hash(coeffs: Sequence[int]) -> str:
    if len(coeffs) != HASH_LEN:
        raise ValueError(f"hash must have {HASH_LEN} coefficients, got {len(coeffs)}")
    for i, c in enumerate(coeffs):
        if not 0 <= c <= QMAX:
            raise ValueError(f"coefficient {i} out of range: {c}")
    return " ".join(format(int(c), "x") for c in coeffs)


def decode_hash(s: str) -> tuple[int, ...]:
    words = s.split()
    if len(words) != HASH_LEN:
        raise HashParseError(f"expected {HASH_LEN} words, got {len(words)}")
    out = []
    for i, w in enumerate(words):
        if not _HEX_WORD.fullmatch(w):
            raise HashParseError(f"word {i} is not hexadecimal: {w!r}", word=i)
        v = int(w, 16)
        if v > QMAX:
            raise HashParseError(f"word {i} out of range: {w!r}", word=i)
        out.append(v)
    return tuple(out)


def luminance(img: RasterImage) -> np.ndarray:
    """Per-pixel BT.601 luma as an (H, W) float array."""
    return img.pixels.astype(np.float64) @ _LUMA


def luminance_sum(img: RasterImage) -> float:
    return float(luminance(img).sum())


def _edge_run(means: np.ndarray, threshold: float) -> int:
    dark = means < threshold
    if dark.all():
        return len(dark)
    return int(np.argmin(dark))


def _crop_once(lum: np.ndarray, threshold: float, guard: float) -> tuple[int, int, int, int]:
    h, w = lum.shape
    row_means = lum.mean(axis=1)
    col_means = lum.mean(axis=0)
    top = _edge_run(row_means, threshold)
    bottom = _edge_run(row_means[::-1], threshold)
    left = _edge_run(col_means, threshold)
    right = _edge_run(col_means[::-1], threshold)
    top = top if top <= guard * h else 0
    bottom = bottom if bottom <= guard * h else 0
    left = left if left <= guard * w else 0
    right = right if right <= guard * w else 0
    return top, bottom, left, right


def cut_borders(
    img: RasterImage, threshold: float = 8.0, max_side_fraction: float = 0.45
) -> tuple[RasterImage, CropRect]:
    """Strip dark letterbox/pillarbox bars from the image edges.

    Edge rows and columns whose mean luma is below ``threshold`` are removed,
    each side independently. A side whose dark run exceeds ``max_side_fraction``
    of the dimension is left alone. The scan repeats until nothing changes, so
    the result is a fixed point and the operation is idempotent.
    """
    lum = luminance(img)
    H, W = lum.shape
    x0, y0, x1, y1 = 0, 0, W, H
    while True:
        top, bottom, left, right = _crop_once(lum[y0:y1, x0:x1], threshold, max_side_fraction)
        if not (top or bottom or left or right):
            break
        ny0, ny1 = y0 + top, y1 - bottom
        nx0, nx1 = x0 + left, x1 - right
        if (ny1 - ny0) < 0.1 * H or (nx1 - nx0) < 0.1 * W:
            break
        x0, y0, x1, y1 = nx0, ny0, nx1, ny1
    rect = CropRect(x0, y0, x1 - x0, y1 - y0)
    if rect == CropRect(0, 0, W, H):
        return img, rect
    return RasterImage(img.pixels[y0:y1, x0:x1].copy()), rect
