import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240810)


def make_rng(*key):
    return np.random.default_rng(list(key))
