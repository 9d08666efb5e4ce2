import numpy as np
import pytest

from pixmatch import ModelConfig, build_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_params():
    # 32x32 model shared by read-only tests
    return build_model(ModelConfig(height=32, width=32, seed=7))


def make_frames(rng, n, size=32):
    return [(rng.uniform(0, 255, (size, size, 3))).astype(np.uint8) for _ in range(n)]
