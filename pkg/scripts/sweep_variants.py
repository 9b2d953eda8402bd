"""Compare the two_phase and joint optimization variants on the toy corpus.

Writes one JSON line per (variant, seed) with the A2A/A2G/G2A headline numbers.
"""
import argparse
import dataclasses
import json

from s3clip.cli import load_manifest
from s3clip.config import load_config
from s3clip.evaluation import evaluate
from s3clip.trainer import build_model, fit


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/toy.json")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--variants", nargs="+", default=["two_phase", "joint"])
    args = ap.parse_args()

    base = load_config(args.config)
    manifest = load_manifest(base)
    for variant in args.variants:
        tcfg = dataclasses.replace(base.trainer, variant=variant)
        for seed in args.seeds:
            model = build_model(manifest.identity_count, base.encoder, base.sr, variant, seed)
            fit(manifest, model, base.sampler, tcfg, base.losses, base.threshold, seed)
            reports = evaluate(manifest, model, base.threshold, base.eval, base.sampler.T, base.sampler.D[0])
            row = {"variant": variant, "seed": seed, **{p: r.headline() for p, r in reports.items()}}
            print(json.dumps(row, sort_keys=True), flush=True)


if __name__ == "__main__":
    main()
