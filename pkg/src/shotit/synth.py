"""Synthetic data for tests and benchmarks: unit vectors and frame sequences."""

from __future__ import annotations

import numpy as np

from .imageio import RasterImage


def random_unit_vectors(n: int, dim: int = 100, seed: int = 0, nonneg: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    if nonneg:
        x = np.abs(x)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def gaussian_mixture(
    n: int, n_clusters: int = 100, dim: int = 100, spread: float = 0.05, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors drawn around ``n_clusters`` random non-negative centres.

    Mirrors the geometry of Color Layout feature vectors (non-negative, unit
    norm, strongly clustered by scene). Returns ``(vectors, labels)``.
    """
    rng = np.random.default_rng(seed)
    centres = rng.random((n_clusters, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    labels = rng.integers(n_clusters, size=n)
    x = centres[labels] + spread * rng.standard_normal((n, dim))
    x = np.abs(x)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x, labels


def mixture_queries(n: int, n_clusters: int = 100, dim: int = 100, spread: float = 0.05,
                    seed: int = 0, query_seed: int = 1) -> np.ndarray:
    """Fresh draws from the same mixture as ``gaussian_mixture(..., seed=seed)``."""
    rng = np.random.default_rng(seed)
    centres = rng.random((n_clusters, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    qrng = np.random.default_rng(query_seed)
    labels = qrng.integers(n_clusters, size=n)
    x = np.abs(centres[labels] + spread * qrng.standard_normal((n, dim)))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def movie_frames(
    seconds: float = 10.0, fps: int = 24, width: int = 64, height: int = 48,
    scene_length: float = 1.0, seed: int = 0,
) -> list[RasterImage]:
    """A synthetic clip: a new random colour layout every ``scene_length`` seconds,
    with a slow pan inside each scene so consecutive frames differ slightly.

    Pixel values stay at or above 40 so no frame has dark edges.
    """
    rng = np.random.default_rng(seed)
    n = int(round(seconds * fps))
    per_scene = max(1, int(round(scene_length * fps)))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    frames = []
    scene = None
    for i in range(n):
        if i % per_scene == 0:
            scene = {
                "base": rng.uniform(60, 200, 3),
                "amp": rng.uniform(20, 50, 3),
                "fx": rng.uniform(0.5, 3.0, 3),
                "fy": rng.uniform(0.5, 3.0, 3),
                "phase": rng.uniform(0, 2 * np.pi, 3),
            }
        shift = (i % per_scene) * 0.6
        chans = []
        for c in range(3):
            v = scene["base"][c] + scene["amp"][c] * np.sin(
                2 * np.pi * (scene["fx"][c] * (xx + shift) / width + scene["fy"][c] * yy / height)
                + scene["phase"][c]
            )
            chans.append(v)
        px = np.clip(np.stack(chans, axis=-1), 40, 255)
        frames.append(RasterImage.from_array(px))
    return frames


def add_black_bars(img: RasterImage, bar: int = 20, vertical: bool = True) -> RasterImage:
    """Pad with ``bar`` black rows top and bottom (or columns left/right)."""
    px = img.pixels
    if vertical:
        pad = ((bar, bar), (0, 0), (0, 0))
    else:
        pad = ((0, 0), (bar, bar), (0, 0))
    return RasterImage(np.pad(px, pad, constant_values=0))


def add_noise(img: RasterImage, amplitude: int = 3, seed: int = 0) -> RasterImage:
    rng = np.random.default_rng(seed)
    noise = rng.integers(-amplitude, amplitude + 1, size=img.pixels.shape)
    return RasterImage.from_array(np.clip(img.pixels.astype(np.int64) + noise, 0, 255).astype(np.uint8))
