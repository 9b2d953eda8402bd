from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from ..errors import ValidationError

PLATFORMS = ("aerial", "ground")


@dataclass(frozen=True)
class Frame:
    """A single H x W x 3 image with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValidationError(f"frame must be HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValidationError(f"frame dims must be >= 1, got {px.shape[:2]}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("frame pixels must be finite and in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class Tracklet:
    """An ordered run of same-sized frames of one identity from one camera.

    Frames are held as a single ``(T, H, W, 3)`` float32 array; ``frames``
    exposes them as :class:`Frame` objects.
    """

    pixels: np.ndarray
    identity: int
    platform: str
    camera_id: int
    tracklet_id: int
    native_h: int
    native_w: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 4 or self.pixels.shape[-1] != 3:
            raise ValidationError(
                f"tracklet {self.tracklet_id}: pixels must be (T, H, W, 3), got {self.pixels.shape}"
            )
        if self.pixels.shape[0] < 1:
            raise ValidationError(f"tracklet {self.tracklet_id}: needs at least one frame")
        if self.pixels.shape[1:3] != (self.native_h, self.native_w):
            raise ValidationError(
                f"tracklet {self.tracklet_id}: frames are {self.pixels.shape[1:3]}, "
                f"meta says {(self.native_h, self.native_w)}"
            )
        if min(self.identity, self.camera_id, self.tracklet_id) < 0:
            raise ValidationError(f"tracklet {self.tracklet_id}: ids must be nonnegative")
        if self.platform not in PLATFORMS:
            raise ValidationError(f"tracklet {self.tracklet_id}: unknown platform {self.platform!r}")

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @property
    def frames(self) -> List[Frame]:
        return [Frame(p) for p in self.pixels]

    def meta(self) -> dict:
        return {
            "identity": self.identity,
            "platform": self.platform,
            "camera_id": self.camera_id,
            "tracklet_id": self.tracklet_id,
            "native_h": self.native_h,
            "native_w": self.native_w,
            "frame_count": len(self),
        }


@dataclass
class DatasetManifest:
    tracklets: List[Tracklet] = field(default_factory=list)

    def __post_init__(self):
        self.tracklets = sorted(self.tracklets, key=lambda t: (t.identity, t.tracklet_id))

    @property
    def identity_count(self) -> int:
        return len({t.identity for t in self.tracklets})

    @property
    def identities(self) -> List[int]:
        return sorted({t.identity for t in self.tracklets})

    @property
    def platform_histogram(self) -> Dict[str, int]:
        return dict(Counter(t.platform for t in self.tracklets))

    @property
    def resolution_histogram(self) -> Dict[str, int]:
        """Tracklet counts per 32-pixel band of native height."""
        bands = Counter((t.native_h // 32) * 32 for t in self.tracklets)
        return {f"{lo}-{lo + 31}": n for lo, n in sorted(bands.items())}

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in self.tracklets:
            h.update(repr(sorted(t.meta().items())).encode())
            h.update(np.ascontiguousarray(t.pixels).tobytes())
        return h.hexdigest()

    def summary(self) -> dict:
        return {
            "tracklet_count": len(self.tracklets),
            "identity_count": self.identity_count,
            "platform_histogram": self.platform_histogram,
            "resolution_histogram": self.resolution_histogram,
            "digest": self.digest(),
        }
