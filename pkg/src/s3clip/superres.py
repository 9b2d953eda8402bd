"""2x super-resolution network and the LR -> encoder-input pipeline.

The network predicts a residual on top of bicubic 2x upsampling. The last
projection of the residual path is zero-initialized, so an untrained model
is exactly bicubic interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data.ops import resize_matrix
from .encoder import Attention, Mlp
from .errors import ConfigError, ValidationError


@dataclass(frozen=True)
class SRConfig:
    scale: int = 2
    window: int = 4
    channels: int = 32
    blocks: int = 2
    heads: int = 2

    def validate(self):
        if self.scale != 2:
            raise ConfigError("only 2x super-resolution is supported")
        if self.window < 1 or self.channels % self.heads:
            raise ConfigError("window must be >= 1 and channels divisible by heads")
        return self


_MATRIX_CACHE = {}


def _matrix(n_in, n_out, dtype, device):
    key = (n_in, n_out, dtype, device)
    if key not in _MATRIX_CACHE:
        _MATRIX_CACHE[key] = torch.tensor(resize_matrix(n_in, n_out), dtype=dtype, device=device)
    return _MATRIX_CACHE[key]


def bicubic_tensor(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Differentiable bicubic resize of ``(..., C, H, W)``; no clamping.

    Same interpolation matrices as :func:`s3clip.data.resize_array`.
    """
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    mh = _matrix(h, out_h, x.dtype, x.device)
    mw = _matrix(w, out_w, x.dtype, x.device)
    return torch.matmul(torch.matmul(mh, x), mw.transpose(0, 1))


def window_partition(x, ws):
    """(N, H, W, C) -> (N * nW, ws * ws, C)"""
    N, H, W, C = x.shape
    x = x.view(N, H // ws, ws, W // ws, ws, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, ws * ws, C)


def window_reverse(windows, ws, N, H, W):
    C = windows.shape[-1]
    x = windows.view(N, H // ws, W // ws, ws, ws, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(N, H, W, C)


class WindowBlock(nn.Module):
    def __init__(self, c, heads, window):
        super().__init__()
        self.window = window
        self.ln1 = nn.LayerNorm(c)
        self.attn = Attention(c, heads)
        self.ln2 = nn.LayerNorm(c)
        self.mlp = Mlp(c, 2 * c)

    def forward(self, x):
        # x: (N, H, W, C) with H, W multiples of the window
        N, H, W, _ = x.shape
        win = window_partition(self.ln1(x), self.window)
        x = x + window_reverse(self.attn(win), self.window, N, H, W)
        return x + self.mlp(self.ln2(x))


class WindowSR(nn.Module):
    def __init__(self, cfg: SRConfig = SRConfig(), clamp_output: bool = True):
        super().__init__()
        self.cfg = cfg.validate()
        c = cfg.channels
        self.clamp_output = clamp_output
        self.conv_first = nn.Conv2d(3, c, 3, padding=1)
        self.body = nn.ModuleList(WindowBlock(c, cfg.heads, cfg.window) for _ in range(cfg.blocks))
        self.conv_body = nn.Conv2d(c, c, 3, padding=1)
        self.conv_up = nn.Conv2d(c, 4 * c, 3, padding=1)
        self.conv_last = nn.Conv2d(c, 3, 3, padding=1)
        nn.init.zeros_(self.conv_last.weight)
        nn.init.zeros_(self.conv_last.bias)

    def _pad(self, x):
        h, w = x.shape[-2:]
        ws = self.cfg.window
        ph, pw = (-h) % ws, (-w) % ws
        if ph or pw:
            mode = "reflect" if ph < h and pw < w else "replicate"
            x = F.pad(x, (0, pw, 0, ph), mode=mode)
        return x

    def residual(self, x):
        h, w = x.shape[-2:]
        feat = self.conv_first(self._pad(x))
        y = feat.permute(0, 2, 3, 1)
        for blk in self.body:
            y = blk(y)
        feat = feat + self.conv_body(y.permute(0, 3, 1, 2))
        feat = feat[..., :h, :w]
        up = F.pixel_shuffle(self.conv_up(feat), 2)
        return self.conv_last(F.gelu(up))

    def forward(self, x):
        """(N, 3, h, w) -> (N, 3, 2h, 2w)."""
        if x.dim() != 4 or x.shape[1] != 3 or min(x.shape[-2:]) < 1:
            raise ValidationError(f"expected (N, 3, h, w) with h, w >= 1, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        out = bicubic_tensor(x, 2 * h, 2 * w) + self.residual(x)
        if self.clamp_output and not self.training:
            out = out.clamp(0.0, 1.0)
        return out


def sr_upscale(model: WindowSR, lr_frames: torch.Tensor) -> torch.Tensor:
    return model(lr_frames)


def sr_pipeline(model: WindowSR, lr_frames: torch.Tensor, out_size: Tuple[int, int] = (256, 128)) -> torch.Tensor:
    """SR 2x then bicubic to the encoder input; frame order is preserved.

    Accepts ``(N, 3, h, w)`` or ``(B, T, 3, h, w)``.
    """
    lead = lr_frames.shape[:-3]
    x = lr_frames.reshape(-1, *lr_frames.shape[-3:])
    out = bicubic_tensor(model(x), *out_size)
    if model.clamp_output and not model.training:
        out = out.clamp(0.0, 1.0)
    return out.reshape(*lead, *out.shape[-3:])


def sr_pipeline_tracklet(model: WindowSR, tracklet, out_size=(256, 128)):
    """Tracklet-level wrapper: returns a new Tracklet at ``out_size``."""
    from .data.types import Tracklet

    x = torch.from_numpy(tracklet.pixels).permute(0, 3, 1, 2)
    with torch.no_grad():
        y = sr_pipeline(model, x, out_size).permute(0, 2, 3, 1).clamp(0, 1).numpy()
    return Tracklet(
        pixels=y,
        identity=tracklet.identity,
        platform=tracklet.platform,
        camera_id=tracklet.camera_id,
        tracklet_id=tracklet.tracklet_id,
        native_h=out_size[0],
        native_w=out_size[1],
    )
