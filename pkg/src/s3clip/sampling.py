"""Resolution partitioning and semi-supervised triplet batch construction.

Each batch entry is a triplet of views of one identity: an HR tracklet
upsampled to the encoder input, a synthetic LR copy of the same frames, and
a natural LR tracklet. All randomness comes from an explicit
``numpy.random.Generator`` that the caller owns.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data.ops import IMAGENET_MEAN, resize_array
from .data.types import DatasetManifest, Tracklet
from .errors import ConfigError, SamplingError


@dataclass(frozen=True)
class ResolutionThreshold:
    h_h: int = 128
    w_h: int = 64

    def validate(self, encoder_input: Tuple[int, int] = (256, 128)):
        if self.h_h < 2 or self.w_h < 2:
            raise ConfigError("HR threshold dims must be >= 2")
        if self.h_h >= encoder_input[0] or self.w_h >= encoder_input[1]:
            raise ConfigError(
                f"HR threshold {(self.h_h, self.w_h)} must be below encoder input {encoder_input}"
            )
        return self

    def is_hr(self, t: Tracklet) -> bool:
        return t.native_h >= self.h_h and t.native_w >= self.w_h


@dataclass
class ResolutionPartition:
    hr_set: List[Tracklet]
    lr_set: List[Tracklet]
    threshold: ResolutionThreshold

    def hr_by_identity(self) -> Dict[int, List[Tracklet]]:
        return _group(self.hr_set)

    def lr_by_identity(self) -> Dict[int, List[Tracklet]]:
        return _group(self.lr_set)


def _group(ts: Sequence[Tracklet]) -> Dict[int, List[Tracklet]]:
    out: Dict[int, List[Tracklet]] = defaultdict(list)
    for t in ts:
        out[t.identity].append(t)
    return dict(out)


@dataclass(frozen=True)
class SamplerConfig:
    P: int = 4
    K: int = 1
    T: int = 8
    D: Tuple[float, ...] = (0.5,)
    encoder_input: Tuple[int, int] = (256, 128)
    seed: int = 0
    flip_prob: float = 0.5
    erase_prob: float = 0.5

    def validate(self):
        if self.P < 2:
            raise ConfigError("P must be >= 2")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.T < 2:
            raise ConfigError("T must be >= 2 (temporal loss needs two frames)")
        if not self.D or any(not 0 < d <= 1 for d in self.D):
            raise ConfigError(f"every downscale factor must lie in (0, 1], got {self.D}")
        for p in (self.flip_prob, self.erase_prob):
            if not 0 <= p <= 1:
                raise ConfigError("augmentation probabilities must lie in [0, 1]")
        return self


@dataclass
class Triplet:
    """Views are ``(T, H, W, 3)`` arrays in [0, 1].

    ``sr_target`` is the HR source resized to twice the LR view size, i.e.
    the supervision target of the 2x SR network for ``synthetic_lr_view``.
    """

    identity: int
    hr_view: np.ndarray
    synthetic_lr_view: np.ndarray
    natural_lr_view: np.ndarray
    sr_target: np.ndarray
    hr_platform: str
    natural_platform: str
    natural_is_fallback: bool
    hr_tracklet_id: int
    natural_tracklet_id: int
    aug: dict = field(default_factory=dict)


@dataclass
class TripletBatch:
    triplets: List[Triplet]

    def __len__(self):
        return len(self.triplets)

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.identity for t in self.triplets], dtype=np.int64)


def partition(manifest: DatasetManifest, threshold: ResolutionThreshold) -> ResolutionPartition:
    if not manifest.tracklets:
        raise ConfigError("cannot partition an empty manifest")
    hr = [t for t in manifest.tracklets if threshold.is_hr(t)]
    lr = [t for t in manifest.tracklets if not threshold.is_hr(t)]
    if not hr or not lr:
        raise ConfigError(
            f"partition at {threshold.h_h}x{threshold.w_h} left hr={len(hr)}, lr={len(lr)}; "
            "training needs both"
        )
    return ResolutionPartition(hr, lr, threshold)


def select_frames(n: int, T: int, rng: Optional[np.random.Generator]) -> np.ndarray:
    """T temporally ordered indices: uniform stride with random phase."""
    if n >= T:
        stride = n // T
        span = stride * (T - 1) + 1
        phase = int(rng.integers(0, n - span + 1)) if rng is not None else 0
        return phase + stride * np.arange(T)
    return np.floor(np.arange(T) * n / T).astype(np.int64)


def lr_size(d: float, threshold: ResolutionThreshold) -> Tuple[int, int]:
    return max(1, int(round(d * threshold.h_h))), max(1, int(round(d * threshold.w_h)))


@dataclass(frozen=True)
class TripletPlan:
    """Sampling decisions for one triplet, before any pixels are resized."""

    identity: int
    source: Tracklet
    frame_idx: np.ndarray
    d: float
    natural: Optional[Tracklet]
    natural_idx: Optional[np.ndarray]


def plan_batch(part: ResolutionPartition, cfg: SamplerConfig, rng: np.random.Generator) -> List[TripletPlan]:
    hr_ids = part.hr_by_identity()
    lr_ids = part.lr_by_identity()
    ids = sorted(hr_ids)
    if len(ids) < cfg.P:
        raise SamplingError(f"need {cfg.P} identities with HR tracklets, have {len(ids)}")
    plans = []
    for identity in rng.choice(ids, size=cfg.P, replace=False):
        identity = int(identity)
        for _ in range(cfg.K):
            src = hr_ids[identity][int(rng.integers(len(hr_ids[identity])))]
            idx = select_frames(len(src), cfg.T, rng)
            d = float(cfg.D[int(rng.integers(len(cfg.D)))])
            pool = lr_ids.get(identity, [])
            nat = pool[int(rng.integers(len(pool)))] if pool else None
            nat_idx = select_frames(len(nat), cfg.T, rng) if nat is not None else None
            plans.append(TripletPlan(identity, src, idx, d, nat, nat_idx))
    return plans


def materialize(
    plans: Sequence[TripletPlan], cfg: SamplerConfig, threshold: ResolutionThreshold, with_hr: bool = True
) -> TripletBatch:
    """Resize planned frames into views. ``with_hr=False`` skips the
    encoder-resolution HR view (left as an empty array) for cheap audits."""
    enc_h, enc_w = cfg.encoder_input
    triplets = []
    for p in plans:
        frames = p.source.pixels[p.frame_idx]
        lh, lw = lr_size(p.d, threshold)
        syn = resize_array(frames, lh, lw)
        if p.natural is not None:
            nat = resize_array(p.natural.pixels[p.natural_idx], lh, lw)
            nat_platform, nat_tid, fallback = p.natural.platform, p.natural.tracklet_id, False
        else:
            nat, nat_platform, nat_tid, fallback = syn.copy(), p.source.platform, p.source.tracklet_id, True
        triplets.append(
            Triplet(
                identity=p.identity,
                hr_view=resize_array(frames, enc_h, enc_w) if with_hr else np.empty((len(frames), 0, 0, 3), np.float32),
                synthetic_lr_view=syn,
                natural_lr_view=nat,
                sr_target=resize_array(frames, 2 * lh, 2 * lw) if with_hr else np.empty((len(frames), 0, 0, 3), np.float32),
                hr_platform=p.source.platform,
                natural_platform=nat_platform,
                natural_is_fallback=fallback,
                hr_tracklet_id=p.source.tracklet_id,
                natural_tracklet_id=nat_tid,
            )
        )
    return TripletBatch(triplets)


def sample_batch(part: ResolutionPartition, cfg: SamplerConfig, rng: np.random.Generator) -> TripletBatch:
    return materialize(plan_batch(part, cfg, rng), cfg, part.threshold)


def draw_erase_rect(rng: np.random.Generator, area=(0.02, 0.4), aspect=(0.3, 3.33), tries=20):
    """Normalized (top, left, height, width) rectangle, or None."""
    for _ in range(tries):
        a = rng.uniform(*area)
        r = np.exp(rng.uniform(np.log(aspect[0]), np.log(aspect[1])))
        h, w = np.sqrt(a * r), np.sqrt(a / r)
        if h < 1.0 and w < 1.0:
            return (float(rng.uniform(0, 1 - h)), float(rng.uniform(0, 1 - w)), float(h), float(w))
    return None


def apply_view_aug(view: np.ndarray, flip: bool, rect) -> np.ndarray:
    """Mirror and erase all T frames of a view identically."""
    out = view[:, :, ::-1] if flip else view
    out = np.array(out, copy=True)
    if rect is not None:
        H, W = out.shape[1:3]
        top, left, h, w = rect
        y0, x0 = int(round(top * H)), int(round(left * W))
        y1 = min(H, max(y0 + 1, int(round((top + h) * H))))
        x1 = min(W, max(x0 + 1, int(round((left + w) * W))))
        out[:, y0:y1, x0:x1] = IMAGENET_MEAN
    return out


def augment(batch: TripletBatch, rng: np.random.Generator, cfg: SamplerConfig = SamplerConfig()) -> TripletBatch:
    """Flip and random-erase each tracklet view consistently across its frames.

    The HR view, its synthetic LR copy and the SR target share one decision
    so pixel-level supervision stays aligned; the natural view draws its own.
    """
    out = []
    for t in batch.triplets:
        decisions = {}
        for group in ("hr", "natural"):
            flip = bool(rng.uniform() < cfg.flip_prob)
            rect = draw_erase_rect(rng) if rng.uniform() < cfg.erase_prob else None
            decisions[group] = {"flip": flip, "rect": rect}
        hr, nat = decisions["hr"], decisions["natural"]
        out.append(
            replace(
                t,
                hr_view=apply_view_aug(t.hr_view, hr["flip"], hr["rect"]),
                synthetic_lr_view=apply_view_aug(t.synthetic_lr_view, hr["flip"], hr["rect"]),
                sr_target=apply_view_aug(t.sr_target, hr["flip"], hr["rect"]),
                natural_lr_view=apply_view_aug(t.natural_lr_view, nat["flip"], nat["rect"]),
                aug=decisions,
            )
        )
    return TripletBatch(out)
