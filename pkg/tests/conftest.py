import numpy as np
import pytest

from kgboost import fixtures
from kgboost.data import BinnedDataset, RawDataset, bin_dataset


@pytest.fixture(scope="session")
def fixture8():
    return fixtures.bundled()


@pytest.fixture(scope="session")
def grid8(fixture8):
    return fixture8.data


@pytest.fixture
def small_random():
    rng = np.random.default_rng(123)
    x = rng.random((40, 3))
    y = np.sin(3 * x[:, 0]) + x[:, 1] - x[:, 2] ** 2
    return bin_dataset(RawDataset(x, y), 4)


def binned(bins, targets=None, n=None):
    bins = np.asarray(bins, dtype=np.int64)
    if targets is None:
        targets = np.zeros(bins.shape[0])
    if n is None:
        n = bins.max(axis=0)
    return BinnedDataset(bins, targets, np.broadcast_to(n, (bins.shape[1],)))
