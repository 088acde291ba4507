import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from liveseg.decoder import DecoderConfig
from liveseg.encoder import EncoderConfig
from liveseg.model import build_model
from liveseg.trainer import TrainConfig, train


def micro_configs():
    enc = EncoderConfig(embed_dim=32, depth=1, heads=2, base_channels=8, pos_grid=4)
    dec = DecoderConfig(depths=(0, 0, 1, 0), base_channels=8, pool_sizes=(1, 2, 3),
                        head_channels=16, head_pool_sizes=(1, 2, 3))
    return enc, dec


@pytest.fixture(scope="session")
def micro_bundle():
    """Random-init micro model for mechanical (non-behavioral) tests."""
    enc, dec = micro_configs()
    return build_model(enc, dec, seed=0)


@pytest.fixture(scope="session")
def trained_micro_bundle():
    """Micro model trained briefly on synthetic shapes; click-responsive."""
    enc, dec = micro_configs()
    bundle = build_model(enc, dec, seed=0)
    train(bundle, TrainConfig(steps=400, image_size=64, lr=3e-3, seed=0))
    return bundle
