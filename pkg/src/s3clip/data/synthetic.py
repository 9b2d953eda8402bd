"""Procedural tracklet corpus of walking, color-coded figures.

Each identity owns a fixed appearance signature (head/torso/leg colors plus
a striped torso texture). Tracklets render that figure mid-stride over a
camera-specific background. Aerial tracklets skew toward low native
resolution, ground tracklets toward high.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigError
from .types import DatasetManifest, Tracklet

AERIAL_CAMERAS = (0, 1)
GROUND_CAMERAS = (2, 3)
SUPERSAMPLE = 3


@dataclass(frozen=True)
class Signature:
    head: np.ndarray
    torso: np.ndarray
    legs: np.ndarray
    stripe_freq: float
    stripe_angle: float
    stripe_amp: float
    build: float  # torso half-width in figure coordinates


def _hsv(h, s, v):
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v), dtype=np.float64)


def make_signatures(rng: np.random.Generator, n: int):
    offset = rng.uniform()
    sigs = []
    for i in range(n):
        torso_hue = offset + i / n + rng.uniform(-0.15, 0.15) / n
        sigs.append(
            Signature(
                head=_hsv(rng.uniform(0.02, 0.12), rng.uniform(0.3, 0.6), rng.uniform(0.5, 0.9)),
                torso=_hsv(torso_hue, rng.uniform(0.55, 0.95), rng.uniform(0.55, 0.95)),
                legs=_hsv(rng.uniform(), rng.uniform(0.2, 0.9), rng.uniform(0.15, 0.8)),
                stripe_freq=float(rng.uniform(2.0, 6.0)),
                stripe_angle=float(rng.choice([0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4])),
                stripe_amp=float(rng.uniform(0.12, 0.3)),
                build=float(rng.uniform(0.17, 0.24)),
            )
        )
    return sigs


def _box(y, x, y0, y1, x0, x1):
    return (y >= y0) & (y < y1) & (x >= x0) & (x < x1)


def render_frame(sig: Signature, h: int, w: int, t: int, scene: dict) -> np.ndarray:
    """Render one frame at (h, w) by box-filtering a supersampled raster."""
    hs, ws = h * SUPERSAMPLE, w * SUPERSAMPLE
    y = (np.arange(hs) + 0.5)[:, None] / hs
    x = (np.arange(ws) + 0.5)[None, :] / ws
    y = np.broadcast_to(y, (hs, ws))
    x = np.broadcast_to(x, (hs, ws))

    bg = scene["bg"][None, None, :] + scene["bg_grad"] * (y[..., None] - 0.5)
    img = np.array(bg, dtype=np.float64)

    phase = scene["phase"] + scene["speed"] * t
    cx = 0.5 + scene["drift"] * (t - scene["t_mid"])
    swing = 0.07 * np.sin(phase)
    bob = 0.01 * np.abs(np.sin(phase))
    light = scene["light"]

    # legs (drawn first so the torso overlaps the hips)
    for side, sgn in ((0, 1.0), (1, -1.0)):
        lx = cx + sgn * 0.09 + (swing if side == 0 else -swing)
        m = _box(y, x, 0.55 + bob, 0.96, lx - 0.065, lx + 0.065)
        img[m] = sig.legs * light

    # arms swing opposite to legs
    for sgn in (1.0, -1.0):
        ax = cx + sgn * (sig.build + 0.04) - sgn * 0.7 * swing
        m = _box(y, x, 0.22 + bob, 0.5 + bob, ax - 0.035, ax + 0.035)
        img[m] = sig.torso * 0.8 * light

    torso = _box(y, x, 0.2 + bob, 0.57 + bob, cx - sig.build, cx + sig.build)
    u = (x - cx) * np.cos(sig.stripe_angle) + (y - 0.38) * np.sin(sig.stripe_angle)
    stripes = 1.0 + sig.stripe_amp * np.sign(np.sin(2 * np.pi * sig.stripe_freq * u / 0.4))
    img[torso] = (sig.torso[None, :] * stripes[torso][:, None]) * light

    head = ((y - 0.11 - bob) / 0.085) ** 2 + ((x - cx) / 0.13) ** 2 <= 1.0
    img[head] = sig.head * light

    img = img.reshape(h, SUPERSAMPLE, w, SUPERSAMPLE, 3).mean(axis=(1, 3))
    img += scene["noise"].normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _native_size(rng, platform: str, lo: int, hi: int) -> Tuple[int, int]:
    u = rng.uniform()
    skew = 2.0 if platform == "aerial" else 0.5
    h = int(round(lo + (hi - lo) * u**skew))
    w = max(1, int(round(h * 0.5 * rng.uniform(0.92, 1.08))))
    return h, w


def generate_synthetic_corpus(
    seed: int,
    n_identities: int,
    tracklets_per_identity: int,
    frames_per_tracklet: int,
    resolution_range: Tuple[int, int],
    hr_threshold: Tuple[int, int] = (128, 64),
    scene_seed: Optional[int] = None,
) -> DatasetManifest:
    """Render a corpus of walking figures.

    ``scene_seed`` redraws every tracklet's scene (size, gait phase, lighting,
    noise) while keeping the identities and camera backgrounds of ``seed``,
    which gives unseen tracklets of the same people.
    """
    lo, hi = int(resolution_range[0]), int(resolution_range[1])
    if n_identities < 2:
        raise ConfigError("need at least 2 identities")
    if tracklets_per_identity < 2:
        raise ConfigError("need >= 2 tracklets per identity to cover both platforms")
    if frames_per_tracklet < 1:
        raise ConfigError("need >= 1 frame per tracklet")
    if not (1 <= lo < hr_threshold[0] and 0.46 * hi >= hr_threshold[1] and hi >= hr_threshold[0]):
        raise ConfigError(
            f"resolution range {resolution_range} must straddle the HR threshold {hr_threshold}"
        )

    rng = np.random.default_rng(seed)
    sigs = make_signatures(rng, n_identities)
    bgs = {
        cam: _hsv(rng.uniform(), rng.uniform(0.05, 0.25), rng.uniform(0.35, 0.65))
        for cam in AERIAL_CAMERAS + GROUND_CAMERAS
    }
    if scene_seed is not None:
        rng = np.random.default_rng([seed, scene_seed])
    noise_key = [seed] if scene_seed is None else [seed, scene_seed]

    tracklets = []
    tid = 0
    for identity in range(n_identities):
        for k in range(tracklets_per_identity):
            # alternate platforms so every identity lands on both
            platform = "aerial" if k % 2 == 0 else "ground"
            cams = AERIAL_CAMERAS if platform == "aerial" else GROUND_CAMERAS
            cam = cams[(k // 2 + identity) % len(cams)]
            h, w = _native_size(rng, platform, lo, hi)
            scene = {
                "bg": bgs[cam] + rng.uniform(-0.05, 0.05, size=3),
                "bg_grad": rng.uniform(-0.15, 0.15),
                "phase": rng.uniform(0, 2 * np.pi),
                "speed": rng.uniform(0.4, 0.9),
                "drift": rng.uniform(-0.012, 0.012),
                "t_mid": (frames_per_tracklet - 1) / 2.0,
                "light": rng.uniform(0.85, 1.15),
                "noise": np.random.default_rng([*noise_key, tid]),
            }
            frames = np.stack(
                [render_frame(sigs[identity], h, w, t, scene) for t in range(frames_per_tracklet)]
            )
            tracklets.append(
                Tracklet(
                    pixels=frames,
                    identity=identity,
                    platform=platform,
                    camera_id=cam,
                    tracklet_id=tid,
                    native_h=h,
                    native_w=w,
                )
            )
            tid += 1
    return DatasetManifest(tracklets)
