"""Toy visual/text encoders with video adapters, BNNeck and prompt bank.

The visual encoder is a small ViT whose blocks carry two adapters:

* an intra-frame adapter (IFA) running beside the MLP,
* a cross-frame adapter (CFAA) that injects a frame-order invariant
  message computed from the class tokens of all frames of a tracklet.

Both adapters have zero-initialized up-projections, so a freshly built
encoder computes exactly what the plain ViT would.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data.types import PLATFORMS
from .errors import ConfigError, ValidationError


@dataclass(frozen=True)
class EncoderConfig:
    input_resolution: Tuple[int, int] = (256, 128)
    patch_size: int = 16
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    adapter_bottleneck: int = 16
    mlp_ratio: int = 4
    cfaa_blocks: str = "all"  # "all" | "last"
    text_depth: int = 2
    text_max_len: int = 16
    id_tokens: int = 4  # M
    shared_tokens: int = 4  # n, split evenly around the id tokens
    platform_tokens: int = 2  # p

    def validate(self):
        h, w = self.input_resolution
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError(f"input {self.input_resolution} not divisible by patch {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")
        if self.shared_tokens % 2:
            raise ConfigError("shared token count must be even")
        if self.cfaa_blocks not in ("all", "last"):
            raise ConfigError(f"cfaa_blocks must be 'all' or 'last', got {self.cfaa_blocks!r}")
        if self.prompt_length > self.text_max_len:
            raise ConfigError("prompt longer than text_max_len")
        return self

    @property
    def num_patches(self) -> int:
        h, w = self.input_resolution
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def prompt_length(self) -> int:
        return self.platform_tokens + self.shared_tokens + self.id_tokens


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, mask=None):
        *lead, S, D = x.shape
        qkv = self.qkv(x).reshape(*lead, S, 3, self.heads, D // self.heads)
        q, k, v = qkv.unbind(-3)
        q, k, v = (t.transpose(-2, -3) for t in (q, k, v))  # (..., heads, S, hd)
        att = (q @ k.transpose(-1, -2)) * (D // self.heads) ** -0.5
        if mask is not None:
            att = att.masked_fill(mask, float("-inf"))
        out = att.softmax(-1) @ v
        return self.proj(out.transpose(-2, -3).reshape(*lead, S, D))


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class BottleneckAdapter(nn.Module):
    """act(x W_down) W_up, bias-free, W_up starts at zero."""

    def __init__(self, dim, bottleneck):
        super().__init__()
        self.down = nn.Linear(dim, bottleneck, bias=False)
        self.up = nn.Linear(bottleneck, dim, bias=False)
        nn.init.zeros_(self.up.weight)

    def forward(self, x):
        return self.up(F.gelu(self.down(x)))


class CrossFrameAdapter(nn.Module):
    """Message from the mean class-token activation over a tracklet's frames.

    Input ``(B, T, S, D)``; the message has shape ``(B, D)`` and is broadcast
    to every token of every frame. Averaging over T makes it invariant to
    frame order.
    """

    def __init__(self, dim, bottleneck):
        super().__init__()
        self.adapter = BottleneckAdapter(dim, bottleneck)

    def message(self, x):
        return self.adapter(x[:, :, 0, :].mean(dim=1))

    def forward(self, x):
        return self.message(x)[:, None, None, :].expand_as(x)


class VideoBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig, cross_frame: bool):
        super().__init__()
        d = cfg.embed_dim
        self.ln1 = nn.LayerNorm(d)
        self.attn = Attention(d, cfg.heads)
        self.ln2 = nn.LayerNorm(d)
        self.mlp = Mlp(d, d * cfg.mlp_ratio)
        self.ifa = BottleneckAdapter(d, cfg.adapter_bottleneck)
        self.cfaa = CrossFrameAdapter(d, cfg.adapter_bottleneck) if cross_frame else None

    def attention_update(self, x, adapters=True):
        out = x + self.attn(self.ln1(x))
        if adapters and self.cfaa is not None:
            out = out + self.cfaa(x)
        return out

    def mlp_update(self, x, adapters=True):
        out = self.mlp(self.ln2(x)) + x
        if adapters:
            out = out + self.ifa(x)
        return out

    def forward(self, x, adapters=True):
        return self.mlp_update(self.attention_update(x, adapters), adapters)


class VisualEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg.validate()
        d = cfg.embed_dim
        self.patch_embed = nn.Conv2d(3, d, cfg.patch_size, stride=cfg.patch_size)
        self.cls_token = nn.Parameter(torch.randn(d) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(cfg.num_patches + 1, d) * 0.02)
        self.ln_pre = nn.LayerNorm(d)
        self.blocks = nn.ModuleList(
            VideoBlock(cfg, cross_frame=(cfg.cfaa_blocks == "all" or i == cfg.depth - 1))
            for i in range(cfg.depth)
        )
        self.ln_post = nn.LayerNorm(d)

    def tokens(self, frames):
        """(B, T, 3, H, W) normalized frames -> (B, T, S, D) input tokens."""
        if frames.dim() != 5 or tuple(frames.shape[-3:]) != (3, *self.cfg.input_resolution):
            raise ValidationError(
                f"expected (B, T, 3, {self.cfg.input_resolution[0]}, {self.cfg.input_resolution[1]}), "
                f"got {tuple(frames.shape)}"
            )
        B, T = frames.shape[:2]
        x = self.patch_embed(frames.flatten(0, 1)).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        return self.ln_pre(x).reshape(B, T, x.shape[1], -1)

    def forward(self, frames, adapters=True):
        """Returns (class embeddings (B, T, D), patch tokens (B, T, L, D))."""
        x = self.tokens(frames)
        for blk in self.blocks:
            x = blk(x, adapters)
        x = self.ln_post(x)
        return x[:, :, 0], x[:, :, 1:]


@dataclass
class EmbeddingSet:
    frame_embeddings: torch.Tensor  # (B, T, D)
    video_embedding: torch.Tensor  # (B, D)
    pre_neck: torch.Tensor
    post_neck: torch.Tensor


class ReIDModel(nn.Module):
    """Visual encoder + BNNeck + ID classifier."""

    def __init__(self, cfg: EncoderConfig, num_classes: int):
        super().__init__()
        self.visual = VisualEncoder(cfg)
        self.neck = nn.BatchNorm1d(cfg.embed_dim)
        self.classifier = nn.Linear(cfg.embed_dim, num_classes, bias=False)
        nn.init.normal_(self.classifier.weight, std=0.001)

    def encode_frame(self, frame, adapters=True):
        """One normalized (3, H, W) frame -> (class embedding (D,), patch tokens (L, D))."""
        cls, patches = self.visual(frame[None, None], adapters)
        return cls[0, 0], patches[0, 0]

    def encode_video(self, frames, adapters=True) -> EmbeddingSet:
        if frames.dim() == 4:
            frames = frames[None]
        per_frame, _ = self.visual(frames, adapters)
        video = per_frame.mean(dim=1)
        return EmbeddingSet(per_frame, video, video, self.neck(video))

    def forward(self, frames):
        emb = self.encode_video(frames)
        return emb, self.classifier(emb.post_neck)


class PromptBank(nn.Module):
    """Learnable prompt tokens.

    A prompt for (identity, platform) is the platform tokens followed by
    shared[:n/2], the identity's tokens, then shared[n/2:].
    """

    def __init__(self, num_ids: int, cfg: EncoderConfig):
        super().__init__()
        d = cfg.embed_dim
        self.num_ids = num_ids
        self.id_tokens = nn.Parameter(torch.randn(num_ids, cfg.id_tokens, d) * 0.02)
        self.shared_tokens = nn.Parameter(torch.randn(cfg.shared_tokens, d) * 0.02)
        self.platform_tokens = nn.Parameter(torch.randn(len(PLATFORMS), cfg.platform_tokens, d) * 0.02)

    def build_prompt(self, identity: int, platform: str):
        return self.build_prompts([identity], [platform])[0]

    def build_prompts(self, identities: Sequence[int], platforms: Sequence[str]):
        ids = torch.as_tensor(list(identities), dtype=torch.long)
        if len(ids) and (ids.min() < 0 or ids.max() >= self.num_ids):
            raise KeyError(f"identity out of range [0, {self.num_ids})")
        try:
            plat = torch.as_tensor([PLATFORMS.index(p) for p in platforms], dtype=torch.long)
        except ValueError as exc:
            raise KeyError(f"unknown platform in {list(platforms)}") from exc
        half = self.shared_tokens.shape[0] // 2
        B = len(ids)
        shared = self.shared_tokens.expand(B, -1, -1)
        return torch.cat(
            [self.platform_tokens[plat], shared[:, :half], self.id_tokens[ids], shared[:, half:]], dim=1
        )


class TextEncoder(nn.Module):
    """Causal transformer over prompt token embeddings; the last position is
    projected to the output embedding."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.embed_dim
        self.max_len = cfg.text_max_len
        self.pos_embed = nn.Parameter(torch.randn(cfg.text_max_len, d) * 0.01)
        self.blocks = nn.ModuleList(_TextBlock(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.text_depth))
        self.ln_final = nn.LayerNorm(d)
        self.proj = nn.Linear(d, d, bias=False)

    def forward(self, tokens):
        if tokens.dim() == 2:
            return self.forward(tokens[None])[0]
        L = tokens.shape[1]
        if L > self.max_len:
            raise ValidationError(f"prompt length {L} exceeds max {self.max_len}")
        mask = torch.ones(L, L, dtype=torch.bool, device=tokens.device).triu(1)
        x = tokens + self.pos_embed[:L]
        for blk in self.blocks:
            x = blk(x, mask)
        return self.proj(self.ln_final(x[:, -1]))


class _TextBlock(nn.Module):
    def __init__(self, d, heads, mlp_ratio):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = Attention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.mlp = Mlp(d, d * mlp_ratio)

    def forward(self, x, mask):
        x = x + self.attn(self.ln1(x), mask)
        return x + self.mlp(self.ln2(x))


def text_bank(text: TextEncoder, prompts: PromptBank, platforms: Sequence[str] = PLATFORMS):
    """Text embeddings for every identity under each platform: (len(platforms), N, D)."""
    ids = list(range(prompts.num_ids))
    return torch.stack([text(prompts.build_prompts(ids, [p] * len(ids))) for p in platforms])
