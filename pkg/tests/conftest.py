import numpy as np
import pytest

from dsloc.verify import five_node_matrix


def naive_weight(S, l, B):
    """Unmemoised recursion, written independently of the library."""
    S = list(S)
    if len(S) == 1:
        return 1.0
    rest = [s for s in S if s != l]
    total = 0.0
    for k in rest:
        phi = B[k, l] - np.mean([B[k, p] for p in rest])
        total += phi * naive_weight(rest, k, B)
    return total


def random_symmetric(rng, n):
    M = np.triu(rng.random((n, n)), 1)
    return M + M.T


@pytest.fixture
def five_nodes():
    return five_node_matrix()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
