import numpy as np
import pytest

from app.config import ArchitectureConfig, SynthConfig
from app.model import build_model
from app.synthdata import gen_sample


# =============================================================================
# Shared fixtures
# =============================================================================

@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    """Two-level network small enough to run many times per test"""
    return ArchitectureConfig(
        in_channels=1, widths=(4, 8), feature_dim=4,
        positional_dim=2, conditional_dim=2, phi_hidden=4, seed=7,
    )


@pytest.fixture
def tiny_params(tiny_arch):
    return build_model(tiny_arch)


@pytest.fixture
def synth_cfg():
    return SynthConfig(image_size=64, count_range=(3, 6), radius_range=(4.0, 9.0), channels=1, seed=3)


def label_fixture(size: int, seed: int, count_range=(4, 10), radius_range=(4.0, 10.0), min_spacing=3.0):
    """Ground-truth label map from the synthetic generator"""
    cfg = SynthConfig(
        image_size=size, count_range=count_range, radius_range=radius_range,
        min_spacing=min_spacing, channels=1, seed=seed,
    )
    return gen_sample(cfg, 0).labels


def disk(shape, center, radius):
    rows, cols = np.indices(shape)
    return (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius ** 2
