import numpy as np
import pytest

from etconsensus.graph import from_edges, from_laplacian
from etconsensus.nonlinearity import saturation
from etconsensus.sim import Scenario, run

REF_L = np.array(
    [
        [7.8, 0, -5.2, -2.6, 0, 0, 0],
        [-3.9, 3.9, 0, 0, 0, 0, 0],
        [0, -4.1, 13.3, -3.4, 0, -5.8, 0],
        [0, 0, -6.7, 12.5, -1.5, -4.3, 0],
        [0, 0, 0, 0, 7.6, -2.2, -5.4],
        [0, 0, 0, 0, -5.1, 6.2, -1.1],
        [0, 0, 0, 0, 0, -8.7, 8.7],
    ]
)
X0_A = [9, 1, -6, 5, 8, -7, 6]
X0_B = [9, 1, -6, 5, 8, 0, 6]

# exact rational left null vector of the closed block (agents 5-7), by sympy
XI_CLOSED = np.array([4437, 6612, 3590]) / 14639


def reference_scenario(x0, **kw):
    params = dict(alpha=10.0, beta=10.0, horizon=20.0, stride=0.01)
    params.update(kw)
    return Scenario(graph=from_laplacian(REF_L), output=saturation(1.0), x0=x0, **params)


@pytest.fixture(scope="session")
def ref_graph():
    return from_laplacian(REF_L)


@pytest.fixture(scope="session")
def run_a():
    return run(reference_scenario(X0_A, name="A"))


@pytest.fixture(scope="session")
def run_b():
    return run(reference_scenario(X0_B, name="B"))


@pytest.fixture
def two_cycle():
    return from_edges(2, [(1, 2, 1.0), (2, 1, 1.0)])
