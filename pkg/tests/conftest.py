import numpy as np
import pytest

from emoanim.data import ClipDataset, DatasetSpec, sample_cross_pair
from emoanim.decoder import FusionConfig
from emoanim.encoders import EncoderConfig


@pytest.fixture
def tiny_encoder_config():
    return EncoderConfig(d_model=16, n_blocks=1, n_heads=2, d_inner=32, n_emotions=2)


@pytest.fixture
def tiny_fusion_config():
    return FusionConfig(d_emotion=4, d_content=8, d_style=2, d_level=2,
                        n_heads=4, n_styles=4, n_levels=2)


@pytest.fixture
def tiny_pair():
    ds = ClipDataset.generate(DatasetSpec(
        n_contents=2, n_emotions=2, n_speakers=1, clips_per_cell=1,
        duration_s=0.5, seed=0))
    return sample_cross_pair(ds, np.random.default_rng(0))
