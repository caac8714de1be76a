import numpy as np
import pytest

from frecas.grid import LatentGrid


def rand_grid(rng, channels=3, side=16, scale=1.0) -> LatentGrid:
    return LatentGrid(scale * rng.standard_normal((channels, side, side)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
