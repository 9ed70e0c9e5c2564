import warnings

import numpy as np
import pytest

from frao.fixtures import gaussian_model, load_fixture
from frao.grid import DomainSpec, TruncationWarning


@pytest.fixture(autouse=True)
def _quiet_truncation():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        yield


@pytest.fixture(scope="session")
def line():
    return DomainSpec.linear(-8.0, 8.0, 2048)


@pytest.fixture(scope="session")
def gaussian50():
    return load_fixture("gaussian50")


@pytest.fixture(scope="session")
def gauss_model(gaussian50):
    return gaussian_model(gaussian50.columns["x"])


def random_gaussian_models(n: int, seed: int, n_obs: int = 20, points: int = 1024):
    """Conjugate normal-location models with random data and prior."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        mu0 = rng.uniform(-1, 1)
        sd0 = rng.uniform(0.7, 2.0)
        x = rng.normal(rng.normal(mu0, sd0), 1.0, size=rng.integers(3, n_obs + 1))
        out.append(gaussian_model(x, mu0, sd0, DomainSpec.linear(-8.0, 8.0, points)))
    return out
