import numpy as np
import pytest

from gntk_lab.graph_core import Graph, generate_separated_dataset


@pytest.fixture(scope="session")
def reference_dataset():
    """n=5 graphs of N=4 nodes in d=3, 0.3-separated, plus a test graph."""
    return generate_separated_dataset(5, 4, 3, 0.3, 0.3, seed=0, with_test_graph=True)


@pytest.fixture(scope="session")
def node_dataset():
    return generate_separated_dataset(1, 8, 4, 0.3, 0.3, seed=0, mode="node")


@pytest.fixture
def triangle():
    return Graph.from_edges(np.array([[1.0, 1.0, 1.0], [0, 0, 0], [0, 0, 0]]), [(0, 1), (1, 2), (0, 2)])


def random_graph(rng, N, d, p=0.4):
    edges = [(u, v) for u in range(N) for v in range(u + 1, N) if rng.random() < p]
    return Graph.from_edges(rng.standard_normal((d, N)), edges)
