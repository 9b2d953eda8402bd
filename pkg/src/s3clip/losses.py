"""Training objectives.

Similarities are cosine similarities divided by a temperature ``tau``
(CLIP convention, default 0.07). All functions work on any floating dtype
so they can be gradient-checked in float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .errors import ConfigError

DEFAULT_TAU = 0.07


@dataclass(frozen=True)
class LossWeights:
    beta: float = 1.0  # triplet
    gamma: float = 0.25  # ID
    delta: float = 1.0  # i2t
    epsilon: float = 1.0  # t2i
    margin: float = 0.3
    smoothing: float = 0.1
    tau: float = DEFAULT_TAU
    pixel: float = 1.0
    tdp: float = 1.0
    temporal: float = 1.0

    def validate(self):
        vals = (self.beta, self.gamma, self.delta, self.epsilon, self.margin, self.smoothing,
                self.pixel, self.tdp, self.temporal)
        if any(v < 0 for v in vals):
            raise ConfigError("loss weights must be nonnegative")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.smoothing > 1:
            raise ConfigError("smoothing must be <= 1")
        return self


def make_soft_labels(true_id, num_classes: int, eps: float = 0.1, dtype=torch.float32):
    """Uniform label smoothing: 1 - eps + eps/N on the true class, eps/N elsewhere."""
    ids = torch.as_tensor(true_id, dtype=torch.long)
    q = torch.full((*ids.shape, num_classes), eps / num_classes, dtype=dtype)
    q.scatter_(-1, ids[..., None], 1.0 - eps + eps / num_classes)
    return q


def _similarity(images, texts, tau):
    """images (B, D); texts (N, D) or per-sample (B, N, D) -> logits (B, N)."""
    i = F.normalize(images, dim=-1)
    t = F.normalize(texts, dim=-1)
    if t.dim() == 3:
        return torch.einsum("bd,bnd->bn", i, t) / tau
    return i @ t.transpose(0, 1) / tau


def loss_t2i(image_embeds, text_embeds, text_labels, labels, tau=DEFAULT_TAU):
    """Text-to-image contrastive loss.

    Every text row is an anchor; its softmax runs over the B images and the
    positives are the images sharing its identity. Anchor losses are averaged
    per identity, then over identities. Texts whose identity has no image in
    the batch are ignored.
    """
    labels = torch.as_tensor(labels)
    text_labels = torch.as_tensor(text_labels)
    logits = _similarity(text_embeds, image_embeds, tau)  # (U, B)
    logp = logits.log_softmax(dim=-1)
    pos = (text_labels[:, None] == labels[None, :]).to(logp.dtype)
    npos = pos.sum(-1)
    keep = npos > 0
    if not keep.any():
        return logits.sum() * 0.0
    per_anchor = -(logp * pos).sum(-1)[keep] / npos[keep]
    ids = text_labels[keep]
    uniq = ids.unique()
    per_id = torch.stack([per_anchor[ids == u].mean() for u in uniq])
    return per_id.mean()


def loss_i2t(image_embeds, text_embeds, labels, tau=DEFAULT_TAU):
    """Image-to-text loss: softmax over identity texts for each image.

    ``text_embeds`` row k is identity k; it may be per-sample ``(B, N, D)``.
    """
    logits = _similarity(image_embeds, text_embeds, tau)
    return F.cross_entropy(logits, torch.as_tensor(labels))


def loss_stage1(image_embeds, text_all, text_anchor, labels, tau=DEFAULT_TAU):
    """i2t over the full identity bank plus t2i with per-sample text anchors."""
    return loss_i2t(image_embeds, text_all, labels, tau) + loss_t2i(image_embeds, text_anchor, labels, labels, tau)


def soft_cross_entropy(logits, soft_labels):
    return -(soft_labels * logits.log_softmax(dim=-1)).sum(-1).mean()


def loss_v2sce(video_embeds, text_embeds, soft_labels, tau=DEFAULT_TAU):
    return soft_cross_entropy(_similarity(video_embeds, text_embeds, tau), soft_labels)


def loss_id(logits, soft_labels):
    return soft_cross_entropy(logits, soft_labels)


def pairwise_distances(x):
    sq = (x * x).sum(-1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.transpose(0, 1)
    eye = torch.eye(len(x), dtype=torch.bool, device=x.device)
    pos = (d2 > 0) & ~eye
    # sqrt only where positive: coincident points get distance 0 and a zero gradient
    safe = torch.where(pos, d2, torch.ones_like(d2))
    return torch.where(pos, safe.sqrt(), torch.zeros_like(d2))


def loss_triplet(embeds, labels, margin=0.3, return_valid=False):
    """Batch-hard triplet loss with Euclidean distances.

    Anchors lacking a positive or a negative are skipped; with no valid
    anchor the loss is 0 and the valid flag is False.
    """
    labels = torch.as_tensor(labels)
    dist = pairwise_distances(embeds)
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(len(labels), dtype=torch.bool, device=embeds.device)
    pos_mask = same & ~eye
    neg_mask = ~same
    valid = pos_mask.any(1) & neg_mask.any(1)
    if not valid.any():
        out = embeds.sum() * 0.0
        return (out, False) if return_valid else out
    d_p = dist.masked_fill(~pos_mask, float("-inf")).max(1).values
    d_n = dist.masked_fill(~neg_mask, float("inf")).min(1).values
    out = F.relu(d_p - d_n + margin)[valid].mean()
    return (out, True) if return_valid else out


@dataclass
class ReIDComponents:
    v2sce: torch.Tensor
    triplet: torch.Tensor
    id: torch.Tensor
    i2t: torch.Tensor
    t2i: torch.Tensor


def loss_reid(c: ReIDComponents, w: LossWeights = LossWeights()):
    return c.v2sce + w.beta * c.triplet + w.gamma * c.id + w.delta * c.i2t + w.epsilon * c.t2i


def loss_pixel(sr_frames, hr_frames):
    return (sr_frames - hr_frames).abs().mean()


def loss_tdp(hr_features, sr_features):
    """L1 (mean absolute) gap between encoder features of HR and SR frames."""
    return (hr_features - sr_features).abs().mean()


def loss_temporal(sr_frames, hr_frames):
    """Mean-per-pixel L1 between SR and HR frame-to-frame differences.

    Frames are on axis -4, i.e. ``(..., T, C, H, W)``; T >= 2.
    """
    if sr_frames.shape[-4] < 2:
        raise ValueError("temporal loss needs at least two frames")
    d_sr = sr_frames[..., 1:, :, :, :] - sr_frames[..., :-1, :, :, :]
    d_hr = hr_frames[..., 1:, :, :, :] - hr_frames[..., :-1, :, :, :]
    return (d_sr - d_hr).abs().mean()


def loss_sr(pixel, tdp, temporal, w: Optional[LossWeights] = None):
    if w is None:
        return pixel + tdp + temporal
    return w.pixel * pixel + w.tdp * tdp + w.temporal * temporal
