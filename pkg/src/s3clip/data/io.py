"""On-disk corpus layout.

    root/<identity>/<platform>_<camera>/<tracklet>/frame_00000.png
    root/<identity>/<platform>_<camera>/<tracklet>/meta.json
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..errors import IngestError, ValidationError
from .types import DatasetManifest, Tracklet


def num_workers(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("S3CLIP_NUM_WORKERS", default)))
    except ValueError:
        return default


def tracklet_dir(root: Path, t: Tracklet) -> Path:
    return Path(root) / str(t.identity) / f"{t.platform}_{t.camera_id}" / str(t.tracklet_id)


def write_corpus(manifest: DatasetManifest, root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for t in manifest.tracklets:
        d = tracklet_dir(root, t)
        d.mkdir(parents=True, exist_ok=True)
        for i, px in enumerate(t.pixels):
            img = np.round(np.clip(px, 0.0, 1.0) * 255.0).astype(np.uint8)
            Image.fromarray(img, mode="RGB").save(d / f"frame_{i:05d}.png", optimize=False)
        (d / "meta.json").write_text(json.dumps(t.meta(), indent=2, sort_keys=True))
    (root / "manifest.json").write_text(json.dumps(manifest.summary(), indent=2, sort_keys=True))
    return root


def _load_tracklet(d: Path) -> Tracklet:
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise IngestError(f"tracklet {d}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(f"tracklet {d}: unreadable meta.json ({exc})") from exc
    frame_paths = sorted(d.glob("frame_*.png"), key=lambda p: int(p.stem.split("_")[1]))
    if not frame_paths:
        raise IngestError(f"tracklet {d}: no frames")
    frames = [np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0 for p in frame_paths]
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise ValidationError(f"tracklet {d}: mixed frame sizes {sorted(shapes)}")
    if "frame_count" in meta and meta["frame_count"] != len(frames):
        raise ValidationError(f"tracklet {d}: meta frame_count {meta['frame_count']} != {len(frames)}")
    return Tracklet(
        pixels=np.stack(frames),
        identity=int(meta["identity"]),
        platform=str(meta["platform"]),
        camera_id=int(meta["camera_id"]),
        tracklet_id=int(meta["tracklet_id"]),
        native_h=int(meta["native_h"]),
        native_w=int(meta["native_w"]),
    )


def ingest_corpus(root, workers: Optional[int] = None) -> DatasetManifest:
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"corpus root {root} does not exist")
    dirs = sorted(p for p in root.glob("*/*_*/*") if p.is_dir())
    with ThreadPoolExecutor(max_workers=workers or num_workers()) as pool:
        tracklets = list(pool.map(_load_tracklet, dirs))
    return DatasetManifest(tracklets)
