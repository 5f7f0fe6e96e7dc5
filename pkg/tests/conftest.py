import numpy as np
import pytest

from msgof.types import SiteSet


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


def random_sites(seed: int, d: int, low: float = 0.0, high: float = 10.0) -> SiteSet:
    g = np.random.default_rng(seed)
    return SiteSet(g.uniform(low, high, size=(d, 2)))


@pytest.fixture
def sites10():
    return random_sites(42, 10)


@pytest.fixture
def sites5():
    return random_sites(43, 5)
