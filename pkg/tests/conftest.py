import numpy as np
import pytest
from hypothesis import strategies as st

from dynclust.graph import build_graph, ring_edges

NINE_EDGES = ring_edges(9) + [(1, 5), (3, 7), (2, 8)]


def random_connected_edges(n: int, rng: np.random.Generator, extra: float = 0.3) -> list[tuple[int, int]]:
    """Random spanning tree plus a few random chords."""
    order = rng.permutation(n) + 1
    edges = set()
    for idx in range(1, n):
        parent = order[rng.integers(0, idx)]
        edges.add(tuple(sorted((int(order[idx]), int(parent)))))
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            if rng.random() < extra:
                edges.add((i, j))
    return sorted(edges)


@st.composite
def connected_graphs(draw, min_nodes=1, max_nodes=10):
    n = draw(st.integers(min_nodes, max_nodes))
    seed = draw(st.integers(0, 2**32 - 1))
    alpha = draw(st.floats(0.1, 3.0))
    return build_graph(n, random_connected_edges(n, np.random.default_rng(seed)), alpha)


@pytest.fixture
def nine_graph():
    return build_graph(9, NINE_EDGES, 1.0)


# acceptance lines, echoed in the terminal summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
