"""Resampling, degradation and normalization operators on frames.

All resizing in the package goes through :func:`resize_matrix`, so the numpy
path used for data preparation and the torch path used inside the networks
produce the same numbers.
"""
from __future__ import annotations

import io
import math
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from PIL import Image

from ..errors import ValidationError
from .types import Frame

KEYS_A = -0.5

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def keys_kernel(x, a: float = KEYS_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


@lru_cache(maxsize=256)
def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for k in range(-1, 3):
        idx = base + k
        w = keys_kernel(src - idx)
        # repeated clamped indices accumulate
        np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1)), w)
    mat.setflags(write=False)
    return mat


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) bicubic interpolation matrix along one axis.

    Keys kernel with a = -0.5, pixel-center alignment and edge clamping.
    """
    if n_in < 1 or n_out < 1:
        raise ValidationError(f"resize dims must be >= 1, got {n_in} -> {n_out}")
    return _resize_matrix(int(n_in), int(n_out))


def resize_array(pixels: np.ndarray, target_h: int, target_w: int, clamp: bool = True) -> np.ndarray:
    """Resize ``(..., H, W, C)`` arrays; leading axes are treated as a batch."""
    h, w = pixels.shape[-3], pixels.shape[-2]
    x = np.asarray(pixels, dtype=np.float32)
    if (h, w) != (target_h, target_w):
        mh = resize_matrix(h, target_h).astype(np.float32)
        mw = resize_matrix(w, target_w).astype(np.float32)
        x = np.tensordot(x, mh, axes=([-3], [1]))  # (..., W, C, h')
        x = np.tensordot(x, mw, axes=([-3], [1]))  # (..., C, h', w')
        x = np.moveaxis(x, -3, -1)
    if clamp:
        x = np.clip(x, 0.0, 1.0)
    return np.ascontiguousarray(x, dtype=np.float32)


def bicubic_resize(frame: Frame, target_h: int, target_w: int) -> Frame:
    if target_h < 1 or target_w < 1:
        raise ValidationError(f"target dims must be >= 1, got {(target_h, target_w)}")
    return Frame(resize_array(frame.pixels, target_h, target_w))


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(px: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * px.ndim
    pad[axis] = (r, r)
    padded = np.pad(px, pad, mode="edge")
    n = px.shape[axis]
    out = np.zeros_like(px, dtype=np.float64)
    for i, w in enumerate(kernel):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur_array(pixels: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValidationError(f"blur sigma must be > 0, got {sigma}")
    k = gaussian_kernel(sigma)
    out = _convolve_axis(pixels.astype(np.float64), k, axis=-3)
    out = _convolve_axis(out, k, axis=-2)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def jpeg_roundtrip_array(pixels: np.ndarray, quality: int) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise ValidationError(f"jpeg quality must be in [1, 100], got {quality}")
    img = Image.fromarray(np.round(np.clip(pixels, 0, 1) * 255.0).astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    # fixed subsampling keeps the codec path identical across qualities
    img.save(buf, format="JPEG", quality=int(quality), subsampling=0, optimize=False)
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"), dtype=np.float32) / 255.0


Degradation = Tuple[str, Union[int, float]]


def degrade(frame: Frame, kind: Degradation) -> Frame:
    """Apply one synthetic corruption.

    ``kind`` is ``("bicubic_down", factor)``, ``("gaussian_blur", sigma)`` or
    ``("jpeg", quality)``.
    """
    name, value = kind
    if name == "bicubic_down":
        if value not in (2, 4):
            raise ValidationError(f"downscale factor must be 2 or 4, got {value}")
        return bicubic_resize(frame, max(1, frame.height // value), max(1, frame.width // value))
    if name == "gaussian_blur":
        return Frame(gaussian_blur_array(frame.pixels, float(value)))
    if name == "jpeg":
        return Frame(jpeg_roundtrip_array(frame.pixels, int(value)))
    raise ValidationError(f"unknown degradation {name!r}")


def normalize(frame: Union[Frame, np.ndarray]) -> np.ndarray:
    px = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
    return ((px - IMAGENET_MEAN) / IMAGENET_STD).astype(np.float32)


def denormalize(values: np.ndarray) -> np.ndarray:
    return (np.asarray(values) * IMAGENET_STD + IMAGENET_MEAN).astype(np.float32)
