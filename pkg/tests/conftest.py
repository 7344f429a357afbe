import numpy as np
import pytest

from stfm.transformer import TransformerConfig


def tiny_config(vocab_size=8, num_styles=2, **kw):
    base = dict(num_layers=1, num_heads=2, model_dim=8, ff_dim=16, max_len=8)
    base.update(kw)
    return TransformerConfig(vocab_size, num_styles, **base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
