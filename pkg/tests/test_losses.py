import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from s3clip.errors import ConfigError
from s3clip.losses import (
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

from . import oracles

D = torch.float64


def rnd(*shape, seed=0):
    return torch.randn(*shape, dtype=D, generator=torch.Generator().manual_seed(seed))


class TestSoftLabels:
    def test_eps_zero_one_hot(self):
        q = make_soft_labels([1, 0], 3, 0.0)
        torch.testing.assert_close(q, torch.tensor([[0.0, 1, 0], [1, 0, 0]]))

    def test_two_classes(self):
        torch.testing.assert_close(make_soft_labels([0], 2, 0.1, D)[0], torch.tensor([0.95, 0.05], dtype=D))

    @given(st.integers(1, 50), st.floats(0, 1), st.integers(0, 49))
    def test_sums_to_one_peak_true(self, n, eps, y):
        y = y % n
        q = make_soft_labels([y], n, eps, D)[0]
        assert abs(q.sum().item() - 1) < 1e-6
        assert q.argmax().item() == y or eps >= 1 - 1e-12 or n == 1


class TestT2I:
    def test_single(self):
        assert abs(loss_t2i(rnd(1, 4), rnd(1, 4, seed=1), [0], [0]).item()) < 1e-12

    def test_closed_form_two(self):
        img = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=D)
        txt = torch.tensor([[1.0, 0.0]], dtype=D)
        v = loss_t2i(img, txt, [0], [0, 1], tau=1.0).item()
        assert abs(v - math.log(1 + math.exp(-1))) < 1e-12

    def test_absent_identity_ignored(self):
        img, txt = rnd(4, 6), rnd(3, 6, seed=1)
        full = loss_t2i(img, txt, [0, 1, 2], [0, 0, 1, 1])
        sub = loss_t2i(img, txt[:2], [0, 1], [0, 0, 1, 1])
        torch.testing.assert_close(full, sub)

    def test_matches_oracle(self):
        for s in range(10):
            img, txt = rnd(6, 5, seed=s), rnd(4, 5, seed=100 + s)
            labels = [0, 1, 1, 2, 3, 3]
            ours = loss_t2i(img, txt, [0, 1, 2, 3], labels, 0.07).item()
            ref = oracles.t2i(img.numpy(), txt.numpy(), [0, 1, 2, 3], labels, 0.07)
            assert abs(ours - ref) < 1e-6


class TestI2T:
    def test_single(self):
        assert abs(loss_i2t(rnd(1, 4), rnd(1, 4, seed=1), [0]).item()) < 1e-12

    def test_symmetric_case(self):
        # one image and one text per identity with a symmetric similarity matrix
        e = rnd(4, 4)
        assert abs(loss_i2t(e, e, [0, 1, 2, 3]).item() - loss_t2i(e, e, [0, 1, 2, 3], [0, 1, 2, 3]).item()) < 1e-10

    def test_nonnegative_fuzz(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(1000):
            B, N = int(torch.randint(1, 6, (1,), generator=g)), int(torch.randint(1, 5, (1,), generator=g))
            labels = torch.randint(0, N, (B,), generator=g)
            assert loss_i2t(torch.randn(B, 3, generator=g), torch.randn(N, 3, generator=g), labels).item() >= 0

    def test_per_sample_bank(self):
        img, bank = rnd(3, 4), rnd(5, 4, seed=2)
        torch.testing.assert_close(loss_i2t(img, bank.expand(3, 5, 4), [0, 2, 4]), loss_i2t(img, bank, [0, 2, 4]))

    def test_stage1_sum(self):
        img, allt, anchor = rnd(4, 5), rnd(3, 5, seed=1), rnd(4, 5, seed=2)
        labels = [0, 1, 2, 1]
        ref = loss_i2t(img, allt, labels) + loss_t2i(img, anchor, labels, labels)
        torch.testing.assert_close(loss_stage1(img, allt, anchor, labels), ref)


class TestV2SCE:
    def test_uniform_symmetric(self):
        v = torch.tensor([[1.0, 1.0]], dtype=D)
        t = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=D)
        q = torch.full((1, 2), 0.5, dtype=D)
        assert abs(loss_v2sce(v, t, q).item() - math.log(2)) < 1e-12

    def test_perfect_limit(self):
        v = torch.tensor([[1.0, 0.0]], dtype=D)
        t = torch.tensor([[1.0, 0.0], [-1.0, 0.0]], dtype=D)
        q = make_soft_labels([0], 2, 0.0, D)
        assert loss_v2sce(v, t, q, tau=0.01).item() < 1e-50

    def test_oracle(self):
        v, t = rnd(3, 4), rnd(5, 4, seed=1)
        q = make_soft_labels([0, 3, 4], 5, 0.1, D)
        assert abs(loss_v2sce(v, t, q).item() - oracles.v2sce(v.numpy(), t.numpy(), q.numpy(), 0.07)) < 1e-6


class TestID:
    def test_uniform_logits(self):
        q = make_soft_labels([2], 7, 0.0, D)
        assert abs(loss_id(torch.zeros(1, 7, dtype=D), q).item() - math.log(7)) < 1e-12

    def test_large_margin(self):
        logits = torch.tensor([[100.0, 0.0, 0.0]], dtype=D)
        assert loss_id(logits, make_soft_labels([0], 3, 0.0, D)).item() < 1e-40

    @given(st.floats(-50, 50))
    def test_shift_invariant(self, c):
        z, q = rnd(4, 6), make_soft_labels([0, 1, 2, 5], 6, 0.1, D)
        assert abs(loss_id(z + c, q).item() - loss_id(z, q).item()) < 1e-9


class TestTriplet:
    def test_equal_distances_give_margin(self):
        # regular simplex: every pairwise distance is sqrt(2)
        e = torch.eye(4, dtype=D)
        assert abs(loss_triplet(e, [0, 0, 1, 1], 0.3).item() - 0.3) < 1e-12

    def test_dp_zero_dn_one(self):
        e = torch.tensor([[0.0], [0.0], [1.0], [1.0]], dtype=D)
        assert loss_triplet(e, [0, 0, 1, 1], 0.3).item() == 0.0

    def test_separated_zero(self):
        e = torch.tensor([[0.0], [0.0], [10.0], [10.0]], dtype=D)
        assert loss_triplet(e, [0, 0, 1, 1], 0.3).item() == 0.0

    def test_no_valid_anchor(self):
        out, valid = loss_triplet(rnd(3, 2), [0, 1, 2], return_valid=True)
        assert not valid and out.item() == 0.0

    def test_oracle(self):
        for s in range(10):
            e = rnd(8, 3, seed=s)
            labels = [0, 0, 1, 1, 2, 2, 3, 3]
            assert abs(loss_triplet(e, labels).item() - oracles.triplet(e.tolist(), labels, 0.3)) < 1e-9

    @given(st.floats(-100, 100))
    def test_translation_invariant(self, c):
        e = rnd(6, 3)
        labels = [0, 0, 1, 1, 2, 2]
        assert abs(loss_triplet(e + c, labels).item() - loss_triplet(e, labels).item()) < 1e-6


class TestSRLosses:
    def test_pixel(self):
        x = rnd(2, 3, 4, 4)
        assert loss_pixel(x, x).item() == 0
        assert abs(loss_pixel(x + 0.1, x).item() - 0.1) < 1e-12

    def test_temporal_examples(self):
        hr = rnd(3, 3, 4, 4)
        assert loss_temporal(hr + 0.5, hr).item() < 1e-12
        const = rnd(1, 3, 4, 4).expand(3, -1, -1, -1)
        assert loss_temporal(const, const * 2).item() == 0
        sr = torch.zeros(2, 3, 4, 4, dtype=D)
        sr[1] += 0.1
        assert abs(loss_temporal(sr, torch.zeros_like(sr)).item() - 0.1) < 1e-12

    def test_temporal_static_invariance(self):
        sr, hr, static = rnd(4, 3, 5, 5), rnd(4, 3, 5, 5, seed=1), rnd(1, 3, 5, 5, seed=2)
        torch.testing.assert_close(loss_temporal(sr + static, hr + static), loss_temporal(sr, hr))

    def test_temporal_needs_two_frames(self):
        with pytest.raises(ValueError):
            loss_temporal(rnd(1, 3, 2, 2), rnd(1, 3, 2, 2))

    def test_temporal_oracle(self):
        sr, hr = rnd(5, 3, 4, 4), rnd(5, 3, 4, 4, seed=1)
        assert abs(loss_temporal(sr, hr).item() - oracles.temporal(sr.numpy(), hr.numpy())) < 1e-12

    def test_tdp(self):
        f = rnd(3, 8)
        assert loss_tdp(f, f).item() == 0
        assert abs(loss_tdp(f, f + 0.2).item() - 0.2) < 1e-12

    def test_sr_sum(self):
        assert loss_sr(0.0, 0.0, 0.0) == 0
        assert loss_sr(1.0, 2.0, 3.0) == 6.0
        assert loss_sr(1.0, 2.0, 3.0, LossWeights(pixel=2, tdp=0, temporal=1)) == 5.0


class TestReID:
    def test_zero(self):
        z = torch.zeros((), dtype=D)
        assert loss_reid(ReIDComponents(z, z, z, z, z)).item() == 0

    def test_weights(self):
        c = ReIDComponents(*(torch.tensor(v, dtype=D) for v in (1.0, 2.0, 4.0, 8.0, 16.0)))
        assert loss_reid(c).item() == 1 + 2 + 0.25 * 4 + 8 + 16

    def test_weights_validate(self):
        with pytest.raises(ConfigError):
            LossWeights(beta=-1).validate()
        with pytest.raises(ConfigError):
            LossWeights(tau=0).validate()


class TestNonnegativity:
    @given(st.integers(0, 10_000))
    def test_all(self, seed):
        g = torch.Generator().manual_seed(seed)
        img, txt = torch.randn(4, 3, generator=g), torch.randn(3, 3, generator=g)
        labels = torch.randint(0, 3, (4,), generator=g)
        q = make_soft_labels(labels, 3, 0.1)
        assert loss_t2i(img, txt, [0, 1, 2], labels).item() >= 0
        assert loss_v2sce(img, txt, q).item() >= 0
        assert loss_id(torch.randn(4, 3, generator=g), q).item() >= 0
        assert loss_triplet(img, labels).item() >= 0


class TestGradientSpotChecks:
    def test_t2i_and_triplet(self):
        img = rnd(4, 3).requires_grad_()
        txt = rnd(2, 3, seed=1).requires_grad_()
        err = oracles.grad_rel_error(lambda: loss_t2i(img, txt, [0, 1], [0, 0, 1, 1], 0.5), [img, txt])
        assert err < 1e-4
        e = rnd(6, 3, seed=3).requires_grad_()
        assert oracles.grad_rel_error(lambda: loss_triplet(e, [0, 0, 1, 1, 2, 2]), [e]) < 1e-4
