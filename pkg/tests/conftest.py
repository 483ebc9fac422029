import numpy as np
import pytest
import torch

from occam.encoder import EncoderConfig, EncoderModel


@pytest.fixture
def tiny_model():
    """Small random-weight encoder; CAM invariants must hold for any weights."""
    torch.manual_seed(0)
    return EncoderModel(
        EncoderConfig(stage_widths=(8, 16), norm_groups=4, projector_hidden=16, embedding_dim=8)
    ).eval()


def make_model(seed: int = 0, **kwargs) -> EncoderModel:
    torch.manual_seed(seed)
    defaults = dict(stage_widths=(8, 16), norm_groups=4, projector_hidden=16, embedding_dim=8)
    defaults.update(kwargs)
    return EncoderModel(EncoderConfig(**defaults)).eval()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
