"""Command-line entry points: gen-data, train, eval, degrade-demo."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint, read_header
from .config import ExperimentConfig, load_config
from .data import DatasetManifest, Tracklet, generate_synthetic_corpus, ingest_corpus, write_corpus
from .data.ops import gaussian_blur_array, jpeg_roundtrip_array, resize_array
from .errors import ConfigError, DataError, S3ClipError
from .evaluation import EvalConfig, PROTOCOLS, embed_corpus, evaluate, format_table, reports_to_json
from .trainer import build_model, fit

log = logging.getLogger("s3clip")

# corruptions swept by degrade-demo
DEMO_DEGRADATIONS = (
    ("gaussian_blur", 1.0),
    ("gaussian_blur", 2.0),
    ("jpeg", 30),
    ("jpeg", 10),
    ("bicubic_down", 2),
)


def _degrade_tracklet(t: Tracklet, kind) -> Tracklet:
    name, value = kind
    px = t.pixels
    if name == "gaussian_blur":
        px = gaussian_blur_array(px, float(value))
    elif name == "jpeg":
        px = np.stack([jpeg_roundtrip_array(f, int(value)) for f in px])
    elif name == "bicubic_down":
        h, w = max(1, t.native_h // int(value)), max(1, t.native_w // int(value))
        px = resize_array(px, h, w)
        return dataclasses.replace(t, pixels=px, native_h=h, native_w=w)
    else:
        raise ConfigError(f"unknown degradation {name!r}")
    return dataclasses.replace(t, pixels=px.astype(np.float32))


def _relabel(manifest: DatasetManifest) -> DatasetManifest:
    """Map identities to 0..N-1 so they index prompt and classifier rows."""
    ids = manifest.identities
    if ids == list(range(len(ids))):
        return manifest
    remap = {old: new for new, old in enumerate(ids)}
    return DatasetManifest([dataclasses.replace(t, identity=remap[t.identity]) for t in manifest.tracklets])


def load_manifest(cfg: ExperimentConfig) -> DatasetManifest:
    d = cfg.data
    if d.root:
        manifest = ingest_corpus(d.root)
        if not manifest.tracklets:
            raise DataError(f"no tracklets under {d.root}")
    else:
        manifest = generate_synthetic_corpus(d.seed, d.n_identities, d.tracklets_per_identity,
                                             d.frames_per_tracklet, tuple(d.resolution_range),
                                             (cfg.threshold.h_h, cfg.threshold.w_h))
    for kind in d.degradations:
        manifest = DatasetManifest([_degrade_tracklet(t, kind) for t in manifest.tracklets])
    return _relabel(manifest)


def _model_for(cfg: ExperimentConfig, manifest: DatasetManifest):
    return build_model(manifest.identity_count, cfg.encoder, cfg.sr, cfg.trainer.variant, cfg.seed)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _restore(path, cfg, manifest):
    model = _model_for(cfg, manifest)
    load_checkpoint(path, model)
    model.eval()
    return model


def cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    manifest = load_manifest(cfg)
    write_corpus(manifest, out)
    summary = manifest.summary()
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    manifest = load_manifest(cfg)
    model = _model_for(cfg, manifest)
    resume = Path(args.checkpoint) if args.checkpoint else None
    if resume is not None:
        read_header(resume)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    history = fit(manifest, model, cfg.sampler, cfg.trainer, cfg.losses, cfg.threshold, cfg.seed,
                  out_dir=out, resume=resume, config_echo=cfg.to_dict(),
                  stop_after_epoch=args.stop_after_epoch)
    (out / "history.json").write_text(json.dumps(history, indent=2, sort_keys=True))
    final = history["stage2"][-1] if history["stage2"] else {}
    print(json.dumps({"checkpoint": str(out / "checkpoint.npz"), "final_epoch": final}, sort_keys=True))
    return 0


def _eval_cfg(cfg: ExperimentConfig, protocol: Optional[str]) -> EvalConfig:
    if protocol in (None, "all"):
        return cfg.eval
    return dataclasses.replace(cfg.eval, protocols=(protocol,))


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    if not args.checkpoint:
        raise ConfigError("eval requires --checkpoint")
    out = _out_dir(args, cfg)
    manifest = load_manifest(cfg)
    model = _restore(args.checkpoint, cfg, manifest)
    d = cfg.sampler.D[0]
    reports = evaluate(manifest, model, cfg.threshold, _eval_cfg(cfg, args.protocol), cfg.sampler.T, d)
    table = format_table(reports, method="s3clip-toy")
    header = f"# same-camera exclusion (a2a): {cfg.eval.exclude_same_camera}\n"
    (out / "report.json").write_text(reports_to_json(reports))
    (out / "table.txt").write_text(header + table + "\n")
    print(header + table)
    return 0


def cmd_degrade_demo(args, cfg: ExperimentConfig) -> int:
    """Embedding drift (1 - cosine to the clean embedding) and retrieval deltas per corruption."""
    out = _out_dir(args, cfg)
    manifest = load_manifest(cfg)
    if args.checkpoint:
        model = _restore(args.checkpoint, cfg, manifest)
    else:
        model = _model_for(cfg, manifest).eval()
    T, d = cfg.sampler.T, cfg.sampler.D[0]
    ecfg = _eval_cfg(cfg, args.protocol)
    clean_emb = embed_corpus(manifest.tracklets, model, cfg.threshold, T, d)
    clean = {p: r.headline() for p, r in evaluate(manifest, model, cfg.threshold, ecfg, T, d).items()}
    rows = []
    for kind in DEMO_DEGRADATIONS:
        degraded = DatasetManifest([_degrade_tracklet(t, kind) for t in manifest.tracklets])
        emb = embed_corpus(degraded.tracklets, model, cfg.threshold, T, d)
        drift = (1.0 - (emb * clean_emb).sum(-1)).numpy()
        reports = evaluate(degraded, model, cfg.threshold, ecfg, T, d)
        deltas = {p: {k: v - clean[p][k] for k, v in r.headline().items()} for p, r in reports.items()}
        rows.append({"degradation": list(kind), "drift_mean": float(drift.mean()),
                     "drift_max": float(drift.max()), "delta": deltas})
    result = {"clean": clean, "degradations": rows}
    text = json.dumps(result, indent=2, sort_keys=True)
    (out / "degrade_demo.json").write_text(text)
    lines = [f"{'degradation':<20} {'drift':>8}  " + "  ".join(f"dR1[{p}] dmAP[{p}]" for p in clean)]
    for r in rows:
        name = f"{r['degradation'][0]}={r['degradation'][1]}"
        cells = "  ".join(f"{100 * r['delta'][p]['R1']:+7.2f} {100 * r['delta'][p]['mAP']:+8.2f}"
                          for p in clean)
        lines.append(f"{name:<20} {r['drift_mean']:8.4f}  {cells}")
    print("\n".join(lines))
    print("sha256", hashlib.sha256(text.encode()).hexdigest())
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "degrade-demo": cmd_degrade_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s3clip")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint", metavar="PATH")
        p.add_argument("--protocol", choices=PROTOCOLS + ("all",), default="all")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--stop-after-epoch", type=int, help="stop stage 2 after this many epochs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
        return COMMANDS[args.command](args, cfg)
    except S3ClipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
