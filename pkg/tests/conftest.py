import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from s3clip.data import generate_synthetic_corpus
from s3clip.encoder import EncoderConfig

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(7, 4, 2, 4, (32, 200))


@pytest.fixture(scope="session")
def tiny_enc():
    # small input keeps model-level tests fast
    return EncoderConfig(input_resolution=(64, 32), patch_size=16, embed_dim=32, depth=2, heads=4,
                         adapter_bottleneck=8)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


class TinySetup:
    """A miniature end-to-end configuration: 64x32 encoder input, 32x16 HR threshold."""

    def __init__(self):
        from s3clip.sampling import ResolutionThreshold, SamplerConfig
        from s3clip.superres import SRConfig
        from s3clip.trainer import TrainConfig

        self.enc = EncoderConfig(input_resolution=(64, 32), patch_size=16, embed_dim=32, depth=2, heads=4,
                                 adapter_bottleneck=8)
        self.sr = SRConfig(channels=8, blocks=1, heads=2)
        self.threshold = ResolutionThreshold(32, 16)
        self.sampler = SamplerConfig(P=2, K=1, T=4, encoder_input=(64, 32))
        self.train = TrainConfig(stage1_epochs=2, stage2_epochs=2, batches_per_epoch=3, warmup_epochs=1,
                                 stage2_lr_sr=1e-3, stage2_lr_encoder=1e-3)
        self.manifest = generate_synthetic_corpus(3, 4, 2, 4, (12, 60), hr_threshold=(32, 16))

    def model(self, variant="two_phase", seed=0):
        from s3clip.trainer import build_model

        return build_model(self.manifest.identity_count, self.enc, self.sr, variant, seed)


@pytest.fixture(scope="session")
def tiny():
    return TinySetup()


# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
