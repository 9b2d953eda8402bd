"""Cross-platform retrieval protocols, CMC/mAP, and a definition-level oracle."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .data.types import DatasetManifest, Tracklet
from .errors import ConfigError, ValidationError

log = logging.getLogger(__name__)

PROTOCOLS = ("a2a", "a2g", "g2a")


@dataclass(frozen=True)
class EvalConfig:
    protocols: Tuple[str, ...] = PROTOCOLS
    exclude_same_camera: bool = True
    max_rank: int = 10

    def validate(self):
        bad = set(self.protocols) - set(PROTOCOLS)
        if bad:
            raise ConfigError(f"unknown protocols {sorted(bad)}")
        return self


@dataclass
class ProtocolSplit:
    protocol: str
    query: List[Tracklet]
    gallery: List[Tracklet]
    dropped_queries: int = 0


@dataclass
class EvalReport:
    protocol: str
    rank1: float
    rank5: float
    rank10: float
    mAP: float
    cmc: List[float]
    ap: List[float]
    num_queries: int
    excluded_queries: int
    exclude_same_camera: bool = True

    def headline(self) -> dict:
        return {"R1": self.rank1, "R5": self.rank5, "R10": self.rank10, "mAP": self.mAP}


def _a2a_query_cameras(aerial: Sequence[Tracklet]) -> set:
    cams = sorted({t.camera_id for t in aerial})
    return set(cams[: max(1, len(cams) // 2)])


def build_splits(manifest: DatasetManifest, protocol: str) -> ProtocolSplit:
    """Query/gallery split for one protocol.

    A2A puts the first half of the aerial cameras in the query set and the
    rest in the gallery. Queries whose identity has no gallery tracklet are
    dropped and counted.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    aerial = [t for t in manifest.tracklets if t.platform == "aerial"]
    ground = [t for t in manifest.tracklets if t.platform == "ground"]
    if protocol == "a2g":
        query, gallery = aerial, ground
    elif protocol == "g2a":
        query, gallery = ground, aerial
    else:
        qcams = _a2a_query_cameras(aerial)
        query = [t for t in aerial if t.camera_id in qcams]
        gallery = [t for t in aerial if t.camera_id not in qcams]
    gallery_ids = {t.identity for t in gallery}
    kept = [t for t in query if t.identity in gallery_ids]
    dropped = len(query) - len(kept)
    if dropped:
        log.warning("%s: dropped %d queries without a gallery match", protocol, dropped)
    return ProtocolSplit(protocol, kept, list(gallery), dropped)


def cmc_map(query_embeds, gallery_embeds, query_ids, gallery_ids, query_cams=None, gallery_cams=None,
            max_rank: int = 10, exclude_same_camera: bool = False, protocol: str = "") -> EvalReport:
    """Cosine-similarity ranking; ties keep gallery index order.

    With ``exclude_same_camera`` every gallery entry from the query's camera
    is removed from that query's ranking. Queries with
    no relevant gallery entry are excluded and counted.
    """
    q = np.asarray(query_embeds, dtype=np.float64)
    g = np.asarray(gallery_embeds, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    g = g / np.linalg.norm(g, axis=1, keepdims=True)
    return rank_metrics(q @ g.T, query_ids, gallery_ids, query_cams, gallery_cams, max_rank,
                        exclude_same_camera, protocol)


def rank_metrics(sim, query_ids, gallery_ids, query_cams=None, gallery_cams=None, max_rank=10,
                 exclude_same_camera=False, protocol="") -> EvalReport:
    sim = np.asarray(sim, dtype=np.float64)
    qids, gids = np.asarray(query_ids), np.asarray(gallery_ids)
    order = np.argsort(-sim, axis=1, kind="stable")
    matches = gids[order] == qids[:, None]
    if exclude_same_camera and query_cams is not None:
        qc, gc = np.asarray(query_cams), np.asarray(gallery_cams)
        keep = gc[order] != qc[:, None]
    else:
        keep = np.ones_like(matches)
    cmc_rows, aps = [], []
    excluded = 0
    for i in range(len(qids)):
        m = matches[i][keep[i]].astype(np.int64)
        n_rel = int(m.sum())
        if n_rel == 0:
            excluded += 1
            continue
        hits = np.cumsum(m)
        row = (hits[:max_rank] > 0).astype(np.float64)
        if len(row) < max_rank:
            row = np.concatenate([row, np.full(max_rank - len(row), row[-1] if len(row) else 0.0)])
        cmc_rows.append(row)
        ranks = np.flatnonzero(m) + 1
        aps.append(float(np.mean(hits[ranks - 1] / ranks)))
    if not aps:
        raise ValidationError("no valid query (every query lacks a relevant gallery entry)")
    cmc = np.mean(cmc_rows, axis=0)
    pick = lambda k: float(cmc[min(k, max_rank) - 1])
    return EvalReport(protocol, pick(1), pick(5), pick(10), float(np.mean(aps)), cmc.tolist(), aps,
                      len(aps), excluded, exclude_same_camera)


def brute_force_oracle(similarities, relevance, max_rank: int = 10, valid=None):
    """Reference CMC/mAP from the definitions, written independently of
    :func:`rank_metrics`: explicit per-query sort and counting loops.

    ``relevance[i][j]`` is truthy when gallery j matches query i;
    ``valid[i][j]`` false removes gallery j from query i's list.
    Returns (cmc list, mAP, per-query APs).
    """
    n_q = len(similarities)
    cmc_counts = [0] * max_rank
    aps = []
    for i in range(n_q):
        cols = [j for j in range(len(similarities[i])) if valid is None or valid[i][j]]
        ranked = sorted(cols, key=lambda j: (-float(similarities[i][j]), j))
        rel = [bool(relevance[i][j]) for j in ranked]
        total = sum(rel)
        if total == 0:
            continue
        first = rel.index(True) + 1
        for k in range(1, max_rank + 1):
            if first <= k:
                cmc_counts[k - 1] += 1
        found = 0
        precisions = []
        for r, is_rel in enumerate(rel, start=1):
            if is_rel:
                found += 1
                precisions.append(found / r)
        aps.append(sum(precisions) / total)
    n_valid = len(aps)
    cmc = [c / n_valid for c in cmc_counts]
    return cmc, sum(aps) / n_valid, aps


def embed_corpus(tracklets: Sequence[Tracklet], model, threshold, T: int = 8, d: float = 0.5) -> torch.Tensor:
    """L2-normalized post-neck video embeddings with per-tracklet routing."""
    from .trainer import embed_tracklets

    emb = embed_tracklets(model, tracklets, threshold, T, post_neck=True, d=d)
    return F.normalize(emb, dim=-1)


def evaluate(manifest: DatasetManifest, model, threshold, cfg: EvalConfig = EvalConfig(), T: int = 8,
             d: float = 0.5) -> Dict[str, EvalReport]:
    cfg.validate()
    cache: Dict[int, torch.Tensor] = {}
    embs = embed_corpus(manifest.tracklets, model, threshold, T, d)
    for t, e in zip(manifest.tracklets, embs):
        cache[t.tracklet_id] = e
    reports = {}
    for proto in cfg.protocols:
        split = build_splits(manifest, proto)
        if not split.query or not split.gallery:
            log.warning("%s: empty split, skipped", proto)
            continue
        qe = torch.stack([cache[t.tracklet_id] for t in split.query]).numpy()
        ge = torch.stack([cache[t.tracklet_id] for t in split.gallery]).numpy()
        rep = cmc_map(
            qe, ge,
            [t.identity for t in split.query], [t.identity for t in split.gallery],
            [t.camera_id for t in split.query], [t.camera_id for t in split.gallery],
            cfg.max_rank, exclude_same_camera=(cfg.exclude_same_camera and proto == "a2a"), protocol=proto,
        )
        rep.excluded_queries += split.dropped_queries
        reports[proto] = rep
    return reports


_LABELS = {"a2a": "A->A", "a2g": "A->G", "g2a": "G->A"}


def format_table(reports: Dict[str, EvalReport], method: str = "model") -> str:
    """Plain-text table: R1/R5/R10/mAP per protocol, percentages."""
    protos = [p for p in PROTOCOLS if p in reports]
    head1 = f"{'Method':<16}" + "".join(f"| {_LABELS[p]:^31} " for p in protos) + "| Overall mAP"
    head2 = f"{'':<16}" + "".join("|  R1     R5     R10    mAP    " for _ in protos) + "|"
    row = f"{method:<16}"
    for p in protos:
        r = reports[p]
        row += "| " + " ".join(f"{100 * v:6.2f}" for v in (r.rank1, r.rank5, r.rank10, r.mAP)) + "  "
    overall = np.mean([reports[p].mAP for p in protos]) if protos else float("nan")
    row += f"| {100 * overall:6.2f}"
    return "\n".join([head1, head2, "-" * len(head2), row])


def reports_to_json(reports: Dict[str, EvalReport]) -> str:
    return json.dumps({p: asdict(r) for p, r in reports.items()}, indent=2, sort_keys=True)
