import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from stylediff.config import TrainConfig
from stylediff.corpus import generate_corpus


def tiny_config(**overrides):
    """Smallest config that exercises every code path."""
    base = dict(
        feature_dim=16,
        text_blocks=1,
        text_heads=2,
        wavenet_layers=2,
        wavenet_hidden=16,
        et_convs=2,
        diffusion_steps=10,
        batch_size=2,
        warmup_steps=10,
        vocab_size=24,
        n_speakers=2,
        n_rhythms=2,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base).validate()


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_corpus")
    return generate_corpus(
        2, 2, utterances_per_pair=3, seed=5, out_dir=root, vocab_size=24,
        unseen_speakers=2,
    )
