import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gnnsoup.datasets import random_graph, sbm_dataset  # noqa: E402
from gnnsoup.graph import Graph  # noqa: E402


@pytest.fixture
def path3():
    return Graph.from_edges(3, [0, 1], [1, 2])


@pytest.fixture
def triangle():
    return Graph.from_edges(3, [0, 1, 2], [1, 2, 0])


@pytest.fixture
def two_triangles():
    return Graph.from_edges(6, [0, 1, 2, 3, 4, 5], [1, 2, 0, 4, 5, 3])


@pytest.fixture
def rand20():
    return random_graph(20, 0.2, seed=3)


@pytest.fixture(scope="session")
def sbm_small():
    # noisier than the default fixture so ingredients disagree
    return sbm_dataset(n=200, k=4, p_in=0.08, p_out=0.02, seed=1, noise=1.2)


@pytest.fixture(scope="session")
def sbm_1000():
    return sbm_dataset(n=1000, k=4, p_in=0.05, p_out=0.005, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
