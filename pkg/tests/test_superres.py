import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from s3clip.data import Tracklet, resize_array
from s3clip.errors import ConfigError, ValidationError
from s3clip.superres import SRConfig, WindowSR, bicubic_tensor, sr_pipeline, sr_pipeline_tracklet, sr_upscale


def trained_like(model, scale=0.05):
    with torch.no_grad():
        model.conv_last.weight.normal_(0, scale)
    return model


class TestShapes:
    def test_double(self):
        out = sr_upscale(WindowSR().eval(), torch.rand(2, 3, 64, 32))
        assert out.shape == (2, 3, 128, 64)

    @given(st.integers(1, 13), st.integers(1, 13))
    def test_odd_sizes(self, h, w):
        out = trained_like(WindowSR()).eval()(torch.rand(1, 3, h, w))
        assert out.shape == (1, 3, 2 * h, 2 * w)

    def test_bad_input(self):
        with pytest.raises(ValidationError):
            WindowSR()(torch.rand(3, 64, 32))
        with pytest.raises(ValidationError):
            WindowSR()(torch.rand(1, 1, 8, 8))

    def test_config(self):
        with pytest.raises(ConfigError):
            SRConfig(scale=4).validate()


class TestZeroInit:
    def test_equals_bicubic(self):
        x = torch.rand(3, 3, 64, 32)
        sr = WindowSR().eval()
        torch.testing.assert_close(sr(x), bicubic_tensor(x, 128, 64).clamp(0, 1), atol=0, rtol=0)

    def test_constant(self):
        x = torch.full((1, 3, 10, 6), 0.25)
        torch.testing.assert_close(WindowSR().eval()(x), torch.full((1, 3, 20, 12), 0.25), atol=1e-6, rtol=0)

    def test_pipeline_double_bicubic(self):
        x = np.random.default_rng(0).random((5, 64, 32, 3)).astype(np.float32)
        out = sr_pipeline(WindowSR().eval(), torch.from_numpy(x).permute(0, 3, 1, 2))
        ref = resize_array(resize_array(x, 128, 64, clamp=True), 256, 128, clamp=True)
        np.testing.assert_allclose(out.detach().permute(0, 2, 3, 1).numpy(), ref, atol=1e-5)

    def test_pipeline_5d_keeps_frame_order(self):
        sr = trained_like(WindowSR()).eval()
        x = torch.rand(2, 4, 3, 16, 8)
        out = sr_pipeline(sr, x, (64, 32))
        assert out.shape == (2, 4, 3, 64, 32)
        torch.testing.assert_close(out[1, 2], sr_pipeline(sr, x[1, 2:3], (64, 32))[0], atol=1e-6, rtol=0)


class TestBicubicTensor:
    def test_matches_numpy(self):
        x = np.random.default_rng(1).random((7, 5, 3))
        ours = bicubic_tensor(torch.from_numpy(x).permute(2, 0, 1), 13, 11).permute(1, 2, 0).numpy()
        np.testing.assert_allclose(ours, resize_array(x, 13, 11, clamp=False), atol=1e-5)


class TestClamp:
    def test_train_unclamped_eval_clamped(self):
        sr = WindowSR()
        with torch.no_grad():
            sr.conv_last.bias.fill_(2.0)
        x = torch.rand(1, 3, 8, 4)
        assert sr.train()(x).max() > 1.0
        assert sr.eval()(x).max() <= 1.0


class TestGradients:
    def test_finite_difference_input_and_weight(self):
        torch.manual_seed(3)
        sr = trained_like(WindowSR(SRConfig(channels=8, heads=2, blocks=1)), 0.3).double().train()
        x = torch.rand(1, 3, 6, 5, dtype=torch.float64, requires_grad=True)
        proj = torch.randn(1, 3, 12, 10, dtype=torch.float64)

        def f():
            return (sr(x) * proj).sum()

        f().backward()
        w = sr.body[0].attn.qkv.weight
        for tensor, grad, idx in ((x, x.grad, (0, 1, 2, 3)), (w, w.grad, (3, 5))):
            h = 1e-6
            with torch.no_grad():
                orig = tensor[idx].item()
                tensor[idx] = orig + h
                up = f().item()
                tensor[idx] = orig - h
                down = f().item()
                tensor[idx] = orig
            fd = (up - down) / (2 * h)
            assert abs(fd - grad[idx].item()) / max(abs(fd), 1e-8) < 1e-4


class TestTrackletWrapper:
    def test_output_tracklet(self):
        px = np.random.default_rng(0).random((3, 16, 8, 3)).astype(np.float32)
        t = Tracklet(px, 1, "aerial", 0, 9, 16, 8)
        out = sr_pipeline_tracklet(WindowSR().eval(), t, (64, 32))
        assert out.pixels.shape == (3, 64, 32, 3) and out.identity == 1 and out.tracklet_id == 9
