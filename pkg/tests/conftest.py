import numpy as np
import pytest

from dcgcl.graphs import Graph, generate_synthetic_dataset


def path_graph(n: int, features: np.ndarray | None = None, label: int | None = None) -> Graph:
    edges = [(i, i + 1) for i in range(n - 1)]
    edges = edges + [(j, i) for i, j in edges]
    feats = np.ones((n, 1)) if features is None else features
    return Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2), feats, label)


def triangle() -> Graph:
    e = [(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)]
    return Graph(3, np.array(e), np.ones((3, 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_dataset(12, seed=3, num_nodes=(5, 9))


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
