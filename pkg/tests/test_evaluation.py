import numpy as np
import pytest
from hypothesis import given, strategies as st

from s3clip.errors import ConfigError, ValidationError
from s3clip.evaluation import (
    EvalConfig,
    brute_force_oracle,
    build_splits,
    cmc_map,
    format_table,
    rank_metrics,
    reports_to_json,
)


def test_hand_ap():
    sim = np.array([[0.9, 0.8, 0.7, 0.1]])
    rel_ids = [1, 2, 1, 3]
    rep = rank_metrics(sim, [1], rel_ids)
    assert abs(rep.mAP - (1 + 2 / 3) / 2) < 1e-12
    _, m, _ = brute_force_oracle(sim, [[g == 1 for g in rel_ids]])
    assert abs(m - 0.8333333333333334) < 1e-12


def test_perfect_ranking():
    q = np.eye(3)
    rep = cmc_map(q, q, [0, 1, 2], [0, 1, 2])
    assert rep.rank1 == rep.rank5 == rep.rank10 == rep.mAP == 1.0


def test_single_query_oracle():
    cmc, m, _ = brute_force_oracle([[0.5, 0.1]], [[True, False]])
    assert m == 1.0 and cmc[0] == 1.0


def test_ties_stable_index_order():
    sim = np.array([[0.5, 0.5, 0.5]])
    rep = rank_metrics(sim, [7], [1, 7, 7], max_rank=3)
    assert rep.cmc[0] == 0.0 and rep.cmc[1] == 1.0
    assert abs(rep.mAP - (1 / 2 + 2 / 3) / 2) < 1e-12


def test_query_without_match_excluded():
    sim = np.random.default_rng(0).random((3, 4))
    rep = rank_metrics(sim, [0, 1, 9], [0, 1, 1, 0])
    assert rep.num_queries == 2 and rep.excluded_queries == 1


def test_no_valid_query():
    with pytest.raises(ValidationError):
        rank_metrics(np.ones((1, 2)), [5], [1, 2])


def test_same_camera_exclusion():
    sim = np.array([[0.9, 0.5]])
    rep = rank_metrics(sim, [1], [1, 1], query_cams=[0], gallery_cams=[0, 1], exclude_same_camera=True)
    assert rep.rank1 == 1.0 and rep.mAP == 1.0
    rep = rank_metrics(np.array([[0.9, 0.5, 0.4]]), [1], [2, 3, 1], [0], [0, 1, 1], exclude_same_camera=True)
    assert rep.cmc[0] == 0.0 and rep.cmc[1] == 1.0


@given(st.integers(0, 100_000))
def test_matches_oracle_fuzz(seed):
    rng = np.random.default_rng(seed)
    nq, ng = rng.integers(1, 8), rng.integers(1, 15)
    # coarse similarities force ties
    sim = rng.integers(0, 5, (nq, ng)) / 4.0
    qids, gids = rng.integers(0, 4, nq), rng.integers(0, 4, ng)
    qc, gc = rng.integers(0, 3, nq), rng.integers(0, 3, ng)
    valid = gc[None, :] != qc[:, None]
    rel = (gids[None, :] == qids[:, None]) & valid
    if not rel.any(1).any():
        return
    rep = rank_metrics(sim, qids, gids, qc, gc, 10, exclude_same_camera=True)
    cmc, m, aps = brute_force_oracle(sim, rel, 10, valid)
    assert rep.cmc == cmc
    assert abs(rep.mAP - m) < 1e-12
    assert all(abs(a - b) < 1e-12 for a, b in zip(rep.ap, aps))


@given(st.integers(0, 100_000))
def test_cmc_monotone_and_bounds(seed):
    rng = np.random.default_rng(seed)
    sim = rng.random((5, 12))
    qids, gids = rng.integers(0, 3, 5), np.tile(np.arange(3), 4)
    rep = rank_metrics(sim, qids, gids)
    assert all(a <= b for a, b in zip(rep.cmc, rep.cmc[1:]))
    assert rep.rank1 <= rep.rank5 <= rep.rank10
    assert 0 <= rep.mAP <= 1


@given(st.integers(0, 100_000))
def test_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    sim = rng.standard_normal((4, 10))
    qids, gids = rng.integers(0, 3, 4), np.tile(np.arange(3), 4)[:10]
    base = rank_metrics(sim, qids, gids)
    for f in (np.exp, lambda x: 3 * x + 1, lambda x: np.arctan(x) ** 3):
        rep = rank_metrics(f(sim), qids, gids)
        assert rep.cmc == base.cmc and abs(rep.mAP - base.mAP) < 1e-12


class TestSplits:
    def test_platform_rules(self, small_corpus):
        g2a = build_splits(small_corpus, "g2a")
        assert all(t.platform == "ground" for t in g2a.query)
        assert all(t.platform == "aerial" for t in g2a.gallery)
        a2g = build_splits(small_corpus, "a2g")
        assert all(t.platform == "aerial" for t in a2g.query)
        assert all(t.platform == "ground" for t in a2g.gallery)

    def test_a2a_disjoint_cameras(self, small_corpus):
        s = build_splits(small_corpus, "a2a")
        assert all(t.platform == "aerial" for t in s.query + s.gallery)
        assert not {t.camera_id for t in s.query} & {t.camera_id for t in s.gallery}

    @pytest.mark.parametrize("proto", ["a2a", "a2g", "g2a"])
    def test_disjoint_and_matched(self, small_corpus, proto):
        s = build_splits(small_corpus, proto)
        assert not {t.tracklet_id for t in s.query} & {t.tracklet_id for t in s.gallery}
        gids = {t.identity for t in s.gallery}
        assert all(t.identity in gids for t in s.query)

    def test_unknown(self, small_corpus):
        with pytest.raises(ConfigError):
            build_splits(small_corpus, "g2g")
        with pytest.raises(ConfigError):
            EvalConfig(protocols=("x",)).validate()


def test_table_and_json():
    q = np.eye(3)
    reps = {p: cmc_map(q, q, [0, 1, 2], [0, 1, 2], protocol=p) for p in ("a2a", "a2g", "g2a")}
    table = format_table(reps, "toy")
    assert "A->A" in table and "G->A" in table and "100.00" in table
    assert '"rank1": 1.0' in reports_to_json(reps)
