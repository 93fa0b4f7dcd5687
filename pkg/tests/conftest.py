import numpy as np
import pytest

from vitcompress.model import ViTConfig
from vitcompress.tensor import set_default_dtype


@pytest.fixture(autouse=True)
def _float32_default():
    set_default_dtype("float32")
    yield
    set_default_dtype("float32")


@pytest.fixture
def tiny_cfg():
    """Small config for oracle comparisons (4 patches, 2 layers)."""
    return ViTConfig(layers=2, heads=2, head_dim=4, embed_dim=8, mlp_dim=16,
                     patch_size=4, image_size=8, num_classes=10)


@pytest.fixture
def desk_cfg():
    """The desk-scale default shape used by the acceptance experiments."""
    return ViTConfig(layers=4, heads=3, head_dim=8, embed_dim=24, mlp_dim=48,
                     patch_size=7, image_size=28, num_classes=10)


def rand_images(rng, cfg, batch, dtype=np.float64):
    return rng.standard_normal(
        (batch, cfg.channels, cfg.image_size, cfg.image_size)).astype(dtype)
