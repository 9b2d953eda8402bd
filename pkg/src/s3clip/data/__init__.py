from .io import ingest_corpus, write_corpus
from .ops import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    bicubic_resize,
    degrade,
    denormalize,
    gaussian_blur_array,
    jpeg_roundtrip_array,
    keys_kernel,
    normalize,
    resize_array,
    resize_matrix,
)
from .synthetic import generate_synthetic_corpus
from .types import PLATFORMS, DatasetManifest, Frame, Tracklet

__all__ = [
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "PLATFORMS",
    "DatasetManifest",
    "Frame",
    "Tracklet",
    "bicubic_resize",
    "degrade",
    "denormalize",
    "gaussian_blur_array",
    "generate_synthetic_corpus",
    "ingest_corpus",
    "jpeg_roundtrip_array",
    "keys_kernel",
    "normalize",
    "resize_array",
    "resize_matrix",
    "write_corpus",
]
