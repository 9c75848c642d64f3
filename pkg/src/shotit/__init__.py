"""Screenshot-to-video search over Color Layout frame vectors."""

from .descriptor import compute_descriptor, cut_borders, decode_hash, encode_hash
from .imageio import RasterImage, decode_image
from .vecindex import IvfIndex, VectorIndex, load_snapshot, train_ivf
from .vectorize import normalize_hash

__all__ = [
    "IvfIndex",
    "RasterImage",
    "VectorIndex",
    "compute_descriptor",
    "cut_borders",
    "decode_hash",
    "decode_image",
    "encode_hash",
    "load_snapshot",
    "normalize_hash",
    "train_ivf",
]

__version__ = "0.1.0"
