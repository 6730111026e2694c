import numpy as np
import pytest

from skelsim.catalog import get_card


@pytest.fixture(scope="session")
def quad():
    return get_card("inward-ou-quadratic")


@pytest.fixture(scope="session")
def tempered():
    return get_card("inward-ou-tempered")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def zscore(samples, oracle):
    s = np.asarray(samples, float)
    return (s.mean() - oracle) / (s.std(ddof=1) / np.sqrt(s.size))
