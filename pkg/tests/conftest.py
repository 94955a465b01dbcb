import numpy as np
import pytest

from urbannav.dataset import SamplingParams
from urbannav.model import ModelConfig


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Tagged shard set of 120 walking samples with some positive arrival labels."""
    from urbannav.synthetic import make_synthetic_dataset

    root = tmp_path_factory.mktemp("synth")
    return make_synthetic_dataset(root, seed=3, n=120, params=SamplingParams(lookahead_min=1))


@pytest.fixture
def tiny_cfg():
    return ModelConfig(token_dim=32, num_layers=1, num_heads=4, ffn_dim=64, head_hidden=[32], coord_hidden=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
