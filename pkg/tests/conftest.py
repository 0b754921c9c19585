import numpy as np
import pytest

from gpae.arch import build_arch
from gpae.modelio import random_init
from gpae.network import Model

from toys import make_toy_spec


@pytest.fixture(scope="session")
def toy_spec():
    return make_toy_spec()


@pytest.fixture(scope="session")
def mn01_model():
    """Random-weight smallest model, shared across tests."""
    spec = build_arch(0.1)
    return Model(spec, random_init(spec, seed=2024))


@pytest.fixture(scope="session")
def mn10_spec():
    return build_arch(1.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
