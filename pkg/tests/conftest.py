import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from middleware.access_audit import AccessAudit
from models.config import SynthConfig, TrainConfig
from services.graph_store import load_directory
from services.synth import synth_gaussian_sequence

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture
def three_block_dir() -> Path:
    return FIXTURES / "three_block"


@pytest.fixture
def three_block(three_block_dir):
    return load_directory(three_block_dir)


@pytest.fixture
def tiny_cfg() -> TrainConfig:
    return TrainConfig(
        learning_rate=0.01,
        epochs=2,
        balancing_epochs=1,
        batch_size=32,
        eval_batch_size=64,
        embedding_dim=8,
        layer_count=2,
        fanout=4,
        k=2,
        p=0.1,
        seed=0,
    )


@pytest.fixture
def small_synth_cfg() -> SynthConfig:
    return SynthConfig(
        num_blocks=3,
        classes_per_block=2,
        nodes_per_block=30,
        feature_dim=4,
        mean_scale=3.0,
        p_intra=0.1,
        p_inter=0.02,
        seed=0,
    )


@pytest.fixture
def small_seq(small_synth_cfg):
    return synth_gaussian_sequence(small_synth_cfg)


@pytest.fixture
def audit() -> AccessAudit:
    return AccessAudit()
