import os

os.environ.setdefault("OPSCHED_CHECK_FINITE", "1")

import numpy as np
import pytest

from opsched.cost import load_profile, uniform_profile
from opsched.graph import chain_graph, make_node


@pytest.fixture(scope="session")
def agx():
    return load_profile("agx_orin")


@pytest.fixture(scope="session")
def nano():
    return load_profile("orin_nano")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def relu_chain(n, shape=(1, 8, 4, 4), rho=0.0):
    return chain_graph([make_node(i, "ReLU", shape, shape, rho) for i in range(n)], name=f"relu{n}")


@pytest.fixture
def unit_profile():
    return uniform_profile()
