import numpy as np
import pytest

from salgen import tensor as T


@pytest.fixture(autouse=True)
def _double_precision():
    """Gradient checks and oracles need float64; restore whatever a test set."""
    T.set_precision("f64")
    yield
    T.set_precision("f64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
