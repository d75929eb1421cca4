"""Undirected communication topology with uniform coupling strength.

Node ids are 1-based everywhere outside this module's internals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Invalid topology description."""


@dataclass(frozen=True)
class NeighborSet:
    owner: int
    members: frozenset[int]

    @property
    def degree(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class Graph:
    node_count: int
    edges: frozenset[tuple[int, int]]
    coupling_strength: float
    # 0-based sorted neighbour lists; derived in __post_init__
    _adjacent: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            adj[i - 1].append(j - 1)
            adj[j - 1].append(i - 1)
        object.__setattr__(self, "_adjacent", tuple(tuple(sorted(a)) for a in adj))

    @property
    def alpha(self) -> float:
        return self.coupling_strength

    def adjacent(self, index0: int) -> tuple[int, ...]:
        """0-based neighbour indices of 0-based node ``index0``."""
        return self._adjacent[index0]

    def degree(self, i: int) -> int:
        return len(self._adjacent[i - 1])

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.node_count, self.node_count))
        for i, j in self.edges:
            a[i - 1, j - 1] = a[j - 1, i - 1] = self.coupling_strength
        return a

    def neighbors(self, i: int) -> NeighborSet:
        return neighbors(self, i)

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def build_graph(node_count: int, edges: Iterable[Sequence[int]], coupling_strength: float) -> Graph:
    """Validate an edge list and return a :class:`Graph`.

    Edges are unordered pairs of 1-based node ids. Self-loops, duplicates
    (in either orientation) and out-of-range endpoints are rejected.
    """
    if not isinstance(node_count, (int, np.integer)) or isinstance(node_count, bool) or node_count < 1:
        raise GraphError(f"node_count must be a positive integer, got {node_count!r}")
    alpha = float(coupling_strength)
    if not np.isfinite(alpha) or alpha <= 0:
        raise GraphError(f"coupling_strength must be a positive finite real, got {coupling_strength!r}")

    seen: set[tuple[int, int]] = set()
    for edge in edges:
        if len(edge) != 2:
            raise GraphError(f"edge {tuple(edge)!r} is not a pair")
        i, j = (int(v) for v in edge)
        for v in (i, j):
            if not 1 <= v <= node_count:
                raise GraphError(f"edge ({i}, {j}): endpoint {v} outside [1, {node_count}]")
        if i == j:
            raise GraphError(f"edge ({i}, {j}) is a self-loop")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"edge ({i}, {j}) is a duplicate")
        seen.add(key)
    return Graph(int(node_count), frozenset(seen), alpha)


def laplacian(g: Graph) -> np.ndarray:
    a = g.adjacency()
    return np.diag(a.sum(axis=1)) - a


def components(g: Graph) -> list[list[int]]:
    """Connected components as sorted lists of 1-based ids, ordered by smallest member."""
    seen = [False] * g.node_count
    out = []
    for start in range(g.node_count):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            u = stack.pop()
            comp.append(u + 1)
            for v in g.adjacent(u):
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        out.append(sorted(comp))
    return out


def is_connected(g: Graph) -> bool:
    return len(components(g)) == 1


def neighbors(g: Graph, i: int) -> NeighborSet:
    if not 1 <= i <= g.node_count:
        raise GraphError(f"node {i} outside [1, {g.node_count}]")
    return NeighborSet(i, frozenset(j + 1 for j in g.adjacent(i - 1)))


def ring_edges(n: int) -> list[tuple[int, int]]:
    if n < 3:
        return [(1, 2)] if n == 2 else []
    return [(i, i % n + 1) for i in range(1, n + 1)]
