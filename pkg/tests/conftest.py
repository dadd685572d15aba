import numpy as np
import pytest

from artopen.assets import load_default_chain


@pytest.fixture(scope="session")
def chain():
    return load_default_chain()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
