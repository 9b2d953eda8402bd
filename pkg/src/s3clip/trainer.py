"""Stage-1 prompt learning and stage-2 SR/ReID optimization.

Stage 2 runs in one of two variants:

* ``two_phase``: per accumulation window, phase 1 updates only the SR
  network on L_SR with the encoder frozen, then phase 2 updates only the
  ReID side on L_ReID with the SR network frozen.
* ``joint``: one combined L_SR + L_ReID update of both networks.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint
from .data.io import num_workers
from .data.ops import IMAGENET_MEAN, IMAGENET_STD, resize_array
from .data.types import PLATFORMS, DatasetManifest, Tracklet
from .encoder import EncoderConfig, PromptBank, ReIDModel, TextEncoder, text_bank
from .errors import ConfigError, PhaseLeakageError, TrainingError
from .losses import (
    LossWeights,
    ReIDComponents,
    loss_i2t,
    loss_id,
    loss_pixel,
    loss_reid,
    loss_sr,
    loss_stage1,
    loss_t2i,
    loss_tdp,
    loss_temporal,
    loss_triplet,
    loss_v2sce,
    make_soft_labels,
)
from .sampling import (
    ResolutionPartition,
    ResolutionThreshold,
    SamplerConfig,
    TripletBatch,
    augment,
    lr_size,
    partition,
    plan_batch,
    materialize,
    select_frames,
)
from .superres import SRConfig, WindowSR, bicubic_tensor

log = logging.getLogger(__name__)

VARIANTS = ("two_phase", "joint")


@dataclass(frozen=True)
class TrainConfig:
    stage1_lr: float = 3.5e-4
    stage2_lr_encoder: float = 7.5e-5
    stage2_lr_sr: float = 7.5e-6
    wd_stage1: float = 1e-4
    wd_stage2: float = 5e-3
    wd_stage2_sr: Optional[float] = None  # SR optimizer weight decay; None: same as wd_stage2
    batch_stage1: int = 16
    batch_stage2: int = 8  # recorded only; stage-2 batches are P x K triplets
    grad_accum: int = 3
    warmup_epochs: int = 10
    warmup_factor: float = 0.1
    stage1_epochs: int = 20
    stage2_epochs: int = 30
    batches_per_epoch: int = 0  # 0: derived from the HR set size
    variant: str = "two_phase"
    train_prompts_stage2: bool = False
    audit_phases: bool = True

    def validate(self):
        rates = (self.stage1_lr, self.stage2_lr_encoder, self.stage2_lr_sr)
        if any(r <= 0 for r in rates):
            raise ConfigError("learning rates must be positive")
        decays = (self.wd_stage1, self.wd_stage2, self.sr_weight_decay)
        if any(d < 0 for d in decays):
            raise ConfigError("weight decay must be nonnegative")
        if self.grad_accum < 1:
            raise ConfigError("grad_accum must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.batches_per_epoch < 0 or self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ConfigError("epoch/batch counts must be nonnegative")
        return self

    @property
    def sr_weight_decay(self) -> float:
        return self.wd_stage2 if self.wd_stage2_sr is None else self.wd_stage2_sr


class S3Model(nn.Module):
    def __init__(self, num_ids: int, enc: EncoderConfig = EncoderConfig(), sr: SRConfig = SRConfig(),
                 variant: str = "two_phase"):
        super().__init__()
        self.enc_cfg = enc.validate()
        self.variant = variant
        self.reid = ReIDModel(enc, num_ids)
        self.text = TextEncoder(enc)
        self.prompts = PromptBank(num_ids, enc)
        # in the joint variant SR works on normalized values, so no [0,1] clamp
        self.sr = WindowSR(sr, clamp_output=(variant == "two_phase"))

    @property
    def num_ids(self):
        return self.prompts.num_ids


def build_model(num_ids: int, enc=EncoderConfig(), sr=SRConfig(), variant="two_phase", seed=0) -> S3Model:
    torch.manual_seed(seed)
    return S3Model(num_ids, enc, sr, variant)


def lr_schedule(epoch: int, cfg: TrainConfig):
    """Linear warmup from ``warmup_factor * lr`` to ``lr``, constant after."""
    if cfg.warmup_epochs > 0 and epoch < cfg.warmup_epochs:
        f = cfg.warmup_factor + (1.0 - cfg.warmup_factor) * epoch / cfg.warmup_epochs
    else:
        f = 1.0
    return cfg.stage2_lr_encoder * f, cfg.stage2_lr_sr * f


# --- tensors and routing ---------------------------------------------------

_MEAN = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
_STD = torch.tensor(IMAGENET_STD).view(3, 1, 1)


def to_tensor(frames: np.ndarray) -> torch.Tensor:
    """(..., H, W, 3) array -> (..., 3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(frames)).movedim(-1, -3).float()


def normalize_tensor(x: torch.Tensor) -> torch.Tensor:
    return (x - _MEAN.to(x.dtype)) / _STD.to(x.dtype)


def variant_normalization_routing(variant: str, model: S3Model, lr_frames: torch.Tensor):
    """LR frames in [0, 1] -> (SR input, encoder input at input resolution).

    two_phase: SR consumes [0, 1] values, normalization comes after the SR
    pipeline. joint: normalization comes first and SR output feeds the
    encoder directly.
    """
    out_size = model.enc_cfg.input_resolution
    if variant == "two_phase":
        sr_in = lr_frames
        up = model.sr(sr_in.flatten(0, -4))
        enc = bicubic_tensor(up, *out_size)
        if model.sr.clamp_output and not model.sr.training:
            enc = enc.clamp(0.0, 1.0)
        enc = normalize_tensor(enc)
    elif variant == "joint":
        sr_in = normalize_tensor(lr_frames)
        up = model.sr(sr_in.flatten(0, -4))
        enc = bicubic_tensor(up, *out_size)
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    lead = lr_frames.shape[:-3]
    return sr_in, up.reshape(*lead, *up.shape[-3:]), enc.reshape(*lead, *enc.shape[-3:])


def route_tracklet_frames(model: S3Model, frames: np.ndarray, threshold: ResolutionThreshold,
                          native_hw, d: float = 0.5) -> torch.Tensor:
    """Inference routing for one tracklet's frames: HR -> bicubic to the
    encoder input, LR -> resize to d * threshold, SR pipeline. Returns
    normalized (T, 3, H, W)."""
    enc_h, enc_w = model.enc_cfg.input_resolution
    if native_hw[0] >= threshold.h_h and native_hw[1] >= threshold.w_h:
        return normalize_tensor(to_tensor(resize_array(frames, enc_h, enc_w)))
    lh, lw = lr_size(d, threshold)
    lr = to_tensor(resize_array(frames, lh, lw))
    return variant_normalization_routing(model.variant, model, lr)[2]


# --- parameter audit -------------------------------------------------------

def state_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def reid_side(model: S3Model) -> List[nn.Module]:
    return [model.reid, model.text, model.prompts]


def reid_side_hash(model: S3Model) -> str:
    return hashlib.sha256("".join(state_hash(m) for m in reid_side(model)).encode()).hexdigest()


@contextmanager
def frozen(*modules: nn.Module):
    saved = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    for p, _ in saved:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


def _check_finite(loss: torch.Tensor, what: str, parts: dict):
    if not torch.isfinite(loss):
        detail = {k: float(torch.as_tensor(v).detach()) for k, v in parts.items()}
        raise TrainingError(f"non-finite {what} loss: {detail}")


# --- stage 1 ---------------------------------------------------------------

@torch.no_grad()
def embed_tracklets(model: S3Model, tracklets: Sequence[Tracklet], threshold: ResolutionThreshold,
                    T: int = 8, post_neck: bool = False, d: float = 0.5) -> torch.Tensor:
    was = model.training
    model.eval()
    out = []
    for t in tracklets:
        frames = t.pixels[select_frames(len(t), T, None)]
        x = route_tracklet_frames(model, frames, threshold, (t.native_h, t.native_w), d)
        emb = model.reid.encode_video(x[None])
        out.append(emb.post_neck[0] if post_neck else emb.pre_neck[0])
    model.train(was)
    return torch.stack(out)


def _platform_idx(platforms):
    return torch.tensor([PLATFORMS.index(p) for p in platforms], dtype=torch.long)


def train_stage1(manifest: DatasetManifest, model: S3Model, cfg: TrainConfig, weights: LossWeights,
                 threshold: ResolutionThreshold, T: int = 8, seed: int = 0, log_fn=None) -> List[float]:
    """Learn identity prompt tokens against frozen encoders. Returns epoch-mean losses."""
    feats = embed_tracklets(model, manifest.tracklets, threshold, T)
    labels = torch.tensor([t.identity for t in manifest.tracklets])
    plats = _platform_idx([t.platform for t in manifest.tracklets])

    opt = torch.optim.Adam([model.prompts.id_tokens], lr=cfg.stage1_lr, weight_decay=cfg.wd_stage1)
    before = [state_hash(model.reid), state_hash(model.text)]
    history = []
    model.text.eval()
    with frozen(model.reid, model.text):
        fixed = [p for n, p in model.prompts.named_parameters() if n != "id_tokens"]
        for p in fixed:
            p.requires_grad_(False)
        try:
            for epoch in range(cfg.stage1_epochs):
                rng = np.random.default_rng([seed, 1, epoch])
                order = rng.permutation(len(labels))
                losses = []
                for start in range(0, len(order), cfg.batch_stage1):
                    idx = torch.from_numpy(order[start:start + cfg.batch_stage1])
                    bank = text_bank(model.text, model.prompts)  # (2, N, D)
                    y, pl = labels[idx], plats[idx]
                    per_sample = bank[pl]  # (B, N, D)
                    anchor = per_sample[torch.arange(len(idx)), y]
                    loss = loss_stage1(feats[idx], per_sample, anchor, y, weights.tau)
                    _check_finite(loss, "stage-1", {"stage1": loss})
                    opt.zero_grad(set_to_none=True)
                    loss.backward()
                    opt.step()
                    losses.append(loss.item())
                history.append(float(np.mean(losses)))
                if log_fn:
                    log_fn({"stage": 1, "epoch": epoch, "phase": "prompt", "loss_stage1": history[-1],
                            "lr": cfg.stage1_lr})
        finally:
            for p in fixed:
                p.requires_grad_(True)
    if [state_hash(model.reid), state_hash(model.text)] != before:
        raise PhaseLeakageError("stage 1 modified a frozen encoder")
    return history


# --- stage 2 ---------------------------------------------------------------

@dataclass
class BatchTensors:
    labels: torch.Tensor
    hr: torch.Tensor  # (B, T, 3, H, W) in [0, 1]
    syn: torch.Tensor  # (B, T, 3, h, w)
    nat: torch.Tensor
    target: torch.Tensor  # (B, T, 3, 2h, 2w)
    hr_plat: torch.Tensor
    nat_plat: torch.Tensor
    fallback: torch.Tensor


def batch_tensors(batch: TripletBatch) -> BatchTensors:
    shapes = {t.synthetic_lr_view.shape for t in batch.triplets}
    if len(shapes) != 1:
        raise TrainingError(f"mixed LR view sizes in one batch: {sorted(shapes)}")
    ts = batch.triplets
    return BatchTensors(
        labels=torch.tensor([t.identity for t in ts]),
        hr=to_tensor(np.stack([t.hr_view for t in ts])),
        syn=to_tensor(np.stack([t.synthetic_lr_view for t in ts])),
        nat=to_tensor(np.stack([t.natural_lr_view for t in ts])),
        target=to_tensor(np.stack([t.sr_target for t in ts])),
        hr_plat=_platform_idx([t.hr_platform for t in ts]),
        nat_plat=_platform_idx([t.natural_platform for t in ts]),
        fallback=torch.tensor([t.natural_is_fallback for t in ts]),
    )


def split_by_lr_size(batch: TripletBatch) -> List[TripletBatch]:
    groups: Dict[tuple, list] = {}
    for t in batch.triplets:
        groups.setdefault(t.synthetic_lr_view.shape, []).append(t)
    return [TripletBatch(v) for _, v in sorted(groups.items())]


def sr_losses(model: S3Model, bt: BatchTensors, weights: LossWeights, variant: str):
    _, up, enc_in = variant_normalization_routing(variant, model, bt.syn)
    target = bt.target if variant == "two_phase" else normalize_tensor(bt.target)
    pixel = loss_pixel(up, target)
    temporal = loss_temporal(up, target)
    with torch.no_grad():
        hr_feats = model.reid.encode_video(normalize_tensor(bt.hr)).frame_embeddings
    sr_feats = model.reid.encode_video(enc_in).frame_embeddings
    tdp = loss_tdp(hr_feats, sr_feats)
    total = loss_sr(pixel, tdp, temporal, weights)
    return total, {"pixel": pixel, "tdp": tdp, "temporal": temporal, "sr": total}


def reid_losses(model: S3Model, bt: BatchTensors, weights: LossWeights, variant: str, bank=None,
                sr_grad: bool = False):
    with torch.set_grad_enabled(sr_grad and torch.is_grad_enabled()):
        syn_in = variant_normalization_routing(variant, model, bt.syn)[2]
        nat_in = variant_normalization_routing(variant, model, bt.nat)[2]
    frames = torch.cat([normalize_tensor(bt.hr), syn_in, nat_in])
    labels = torch.cat([bt.labels] * 3)
    plats = torch.cat([bt.hr_plat, bt.hr_plat, bt.nat_plat])
    emb, logits = model.reid(frames)
    if bank is None:
        bank = text_bank(model.text, model.prompts)
    per_sample = bank[plats]
    anchor = per_sample[torch.arange(len(labels)), labels]
    q = make_soft_labels(labels, model.num_ids, weights.smoothing, dtype=emb.pre_neck.dtype)
    comps = ReIDComponents(
        v2sce=loss_v2sce(emb.pre_neck, per_sample, q, weights.tau),
        triplet=loss_triplet(emb.post_neck, labels, weights.margin),
        id=loss_id(logits, q),
        i2t=loss_i2t(emb.pre_neck, per_sample, labels, weights.tau),
        t2i=loss_t2i(emb.pre_neck, anchor, labels, labels, weights.tau),
    )
    total = loss_reid(comps, weights)
    parts = {k: v for k, v in vars(comps).items()}
    parts["reid"] = total
    return total, parts


def make_optimizers(model: S3Model, cfg: TrainConfig):
    enc_params = list(model.reid.parameters())
    if cfg.train_prompts_stage2:
        enc_params.append(model.prompts.id_tokens)
    return {
        "encoder": torch.optim.Adam(enc_params, lr=cfg.stage2_lr_encoder, weight_decay=cfg.wd_stage2),
        "sr": torch.optim.Adam(model.sr.parameters(), lr=cfg.stage2_lr_sr, weight_decay=cfg.sr_weight_decay),
    }


def set_lrs(opts, lr_enc, lr_sr):
    for g in opts["encoder"].param_groups:
        g["lr"] = lr_enc
    for g in opts["sr"].param_groups:
        g["lr"] = lr_sr


def _accumulate(batches, fn):
    """Run ``fn`` on every LR-size group of every batch, backward each scaled
    share, and return the mean of each logged component."""
    groups = [g for b in batches for g in split_by_lr_size(b)]
    n_total = sum(len(g) for g in groups)
    sums: Dict[str, float] = {}
    for g in groups:
        loss, parts = fn(batch_tensors(g))
        share = len(g) / n_total
        _check_finite(loss, "stage-2", parts)
        (loss * share).backward()
        for k, v in parts.items():
            sums[k] = sums.get(k, 0.0) + float(v.detach()) * share
    return sums


def train_stage2_step(batches: Sequence[TripletBatch], model: S3Model, opts, cfg: TrainConfig,
                      weights: LossWeights, audit: Optional[bool] = None) -> dict:
    """One optimizer update from ``len(batches)`` accumulated batches.

    Pass ``cfg.grad_accum`` batches to reproduce the configured accumulation.
    """
    if isinstance(batches, TripletBatch):
        batches = [batches]
    audit = cfg.audit_phases if audit is None else audit
    metrics: dict = {}
    if cfg.variant == "joint":
        model.train()
        for o in opts.values():
            o.zero_grad(set_to_none=True)
        prompt_ctx = frozen(model.text, model.prompts) if not cfg.train_prompts_stage2 else _nullctx()
        with prompt_ctx:
            def joint(bt):
                l_sr, p_sr = sr_losses(model, bt, weights, "joint")
                l_id, p_id = reid_losses(model, bt, weights, "joint", sr_grad=True)
                return l_sr + l_id, {**p_sr, **p_id, "total": l_sr + l_id}
            metrics.update(_accumulate(batches, joint))
        for o in opts.values():
            o.step()
        return metrics

    # phase 1: SR only, encoder frozen in eval mode
    model.sr.train()
    model.reid.eval()
    model.text.eval()
    before = reid_side_hash(model) if audit else None
    opts["sr"].zero_grad(set_to_none=True)
    with frozen(*reid_side(model)):
        metrics.update(_accumulate(batches, lambda bt: sr_losses(model, bt, weights, "two_phase")))
    opts["sr"].step()
    if audit and reid_side_hash(model) != before:
        raise PhaseLeakageError("phase 1 changed encoder-side parameters")

    # phase 2: ReID only, SR frozen in eval mode
    model.sr.eval()
    model.reid.train()
    before = state_hash(model.sr) if audit else None
    opts["encoder"].zero_grad(set_to_none=True)
    prompt_ctx = frozen(model.text, model.prompts) if not cfg.train_prompts_stage2 else frozen(model.text)
    with frozen(model.sr), prompt_ctx:
        bank = None
        if not cfg.train_prompts_stage2:
            with torch.no_grad():
                bank = text_bank(model.text, model.prompts)
        metrics.update(_accumulate(batches, lambda bt: reid_losses(model, bt, weights, "two_phase", bank)))
    opts["encoder"].step()
    if audit and state_hash(model.sr) != before:
        raise PhaseLeakageError("phase 2 changed SR parameters")
    return metrics


@contextmanager
def _nullctx():
    yield


def batches_per_epoch(part: ResolutionPartition, scfg: SamplerConfig, tcfg: TrainConfig) -> int:
    if tcfg.batches_per_epoch:
        return tcfg.batches_per_epoch
    per = math.ceil(len(part.hr_set) / (scfg.P * scfg.K))
    return tcfg.grad_accum * math.ceil(per / tcfg.grad_accum)


def make_batch(part: ResolutionPartition, scfg: SamplerConfig, seed: int, epoch: int, index: int) -> TripletBatch:
    rng = np.random.default_rng([seed, 2, epoch, index])
    return augment(materialize(plan_batch(part, scfg, rng), scfg, part.threshold), rng, scfg)


def epoch_batches(part, scfg, tcfg, seed, epoch):
    """Yield the epoch's batches; built in a small thread pool when
    S3CLIP_NUM_WORKERS > 1. Order and content depend only on the seed."""
    n = batches_per_epoch(part, scfg, tcfg)
    workers = num_workers()
    if workers <= 1:
        for i in range(n):
            yield make_batch(part, scfg, seed, epoch, i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(lambda i: make_batch(part, scfg, seed, epoch, i), range(n))


def train_stage2_epoch(part, model, opts, scfg, tcfg, weights, seed, epoch, log_fn=None) -> dict:
    lr_enc, lr_sr = lr_schedule(epoch, tcfg)
    set_lrs(opts, lr_enc, lr_sr)
    sums: Dict[str, float] = {}
    steps = 0

    def step(window):
        nonlocal steps
        m = train_stage2_step(window, model, opts, tcfg, weights)
        steps += 1
        for k, v in m.items():
            sums[k] = sums.get(k, 0.0) + v
        if log_fn:
            log_fn({"stage": 2, "epoch": epoch, "step": steps, "phase": tcfg.variant,
                    "lr": {"encoder": lr_enc, "sr": lr_sr}, **m})

    window: List[TripletBatch] = []
    for batch in epoch_batches(part, scfg, tcfg, seed, epoch):
        window.append(batch)
        if len(window) == tcfg.grad_accum:
            step(window)
            window = []
    if window:
        step(window)
    return {k: v / max(steps, 1) for k, v in sums.items()}


class MetricsLog:
    """Append-only JSON-lines metric records."""

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, record: dict):
        if self.path:
            with self.path.open("a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def fit(manifest: DatasetManifest, model: S3Model, scfg: SamplerConfig, tcfg: TrainConfig,
        weights: LossWeights, threshold: ResolutionThreshold, seed: int = 0,
        out_dir: Optional[Path] = None, resume: Optional[Path] = None, config_echo: Optional[dict] = None,
        stop_after_epoch: Optional[int] = None) -> dict:
    """Stage 1 then stage 2, checkpointing after every epoch.

    ``resume`` restores a checkpoint written by this function and continues
    where it stopped. ``stop_after_epoch`` ends stage 2 early (used to
    simulate an interruption).
    """
    tcfg.validate()
    scfg.validate()
    threshold.validate(scfg.encoder_input)
    part = partition(manifest, threshold)
    opts = make_optimizers(model, tcfg)
    out_dir = Path(out_dir) if out_dir else None
    logger = MetricsLog(out_dir / "metrics.jsonl" if out_dir else None)
    history = {"stage1": [], "stage2": []}
    start_epoch = 0
    if resume is not None:
        meta = load_checkpoint(resume, model, opts)["meta"]
        history = meta["history"]
        start_epoch = meta["next_epoch"]
    else:
        history["stage1"] = train_stage1(manifest, model, tcfg, weights, threshold, scfg.T, seed, logger)

    def checkpoint(next_epoch):
        if out_dir:
            save_checkpoint(out_dir / "checkpoint.npz", model, opts,
                            meta={"history": history, "next_epoch": next_epoch, "seed": seed},
                            config=config_echo)

    if resume is None:
        checkpoint(0)
    for epoch in range(start_epoch, tcfg.stage2_epochs):
        means = train_stage2_epoch(part, model, opts, scfg, tcfg, weights, seed, epoch, logger)
        history["stage2"].append(means)
        logger({"stage": 2, "epoch": epoch, "phase": "epoch_mean", **means})
        log.info("stage2 epoch %d %s", epoch, {k: round(v, 4) for k, v in means.items()})
        checkpoint(epoch + 1)
        if stop_after_epoch is not None and epoch + 1 >= stop_after_epoch:
            break
    model.eval()
    return history
