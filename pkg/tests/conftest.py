import numpy as np
import pytest

from probdg.tensor_io import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def pytest_configure(config):
    np.seterr(over="raise", invalid="raise")
