import numpy as np
import pytest
import torch

from camoseg import NetworkConfig


@pytest.fixture(autouse=True)
def _fixed_seeds():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def tiny_cfg():
    """Desk-scale config: widths [18, 36, 72, 144], context 32, edge 8."""
    return NetworkConfig(channel_scale=8, input_size=64)


def make_dataset(root, n=6, size=64, seed=3, contrast=0.6):
    """Small synthetic dataset on disk; returns the directory."""
    from camoseg import SynthConfig, synthesize

    cfg = SynthConfig(
        num_images=n, image_size=size, seed=seed, contrast_delta=contrast
    )
    synthesize(cfg, root)
    return root
