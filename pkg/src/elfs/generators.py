"""Named graph families used by the CLI and the test suite."""

from __future__ import annotations

import numpy as np

from .graph import Graph, build_graph


def path(n: int, weight: float = 1.0) -> Graph:
    if n < 2:
        raise ValueError("path needs at least 2 vertices")
    return build_graph([(i, i + 1, weight) for i in range(n - 1)])


def cycle(n: int, weight: float = 1.0) -> Graph:
    if n < 3:
        raise ValueError("cycle needs at least 3 vertices")
    edges = [(i, (i + 1) % n, weight) for i in range(n)]
    return build_graph(edges)


def complete(n: int, weight: float = 1.0) -> Graph:
    if n < 2:
        raise ValueError("complete graph needs at least 2 vertices")
    return build_graph([(i, j, weight) for i in range(n) for j in range(i + 1, n)])


def star(k: int, weight: float = 1.0) -> Graph:
    """Hub vertex 0 with k leaves 1..k."""
    if k < 1:
        raise ValueError("star needs at least 1 leaf")
    return build_graph([(0, i, weight) for i in range(1, k + 1)])


def random_tree(n: int, rng: np.random.Generator,
                wmin: float = 1.0, wmax: float = 1.0) -> Graph:
    """Uniform random labeled tree (Pruefer decode) with uniform weights."""
    if n < 2:
        raise ValueError("tree needs at least 2 vertices")
    if n == 2:
        pairs = [(0, 1)]
    else:
        seq = rng.integers(0, n, size=n - 2)
        degree = np.ones(n, dtype=int)
        for x in seq:
            degree[x] += 1
        pairs = []
        leaves = sorted(x for x in range(n) if degree[x] == 1)
        import heapq

        heapq.heapify(leaves)
        for x in seq:
            leaf = heapq.heappop(leaves)
            pairs.append((leaf, int(x)))
            degree[x] -= 1
            if degree[x] == 1:
                heapq.heappush(leaves, int(x))
        pairs.append((heapq.heappop(leaves), heapq.heappop(leaves)))
    weights = rng.uniform(wmin, wmax, size=len(pairs))
    return build_graph([(u, v, w) for (u, v), w in zip(pairs, weights)])


def random_connected(n: int, extra_edges: int, rng: np.random.Generator,
                     wmin: float = 1.0, wmax: float = 1.0) -> Graph:
    """Random tree plus ``extra_edges`` additional random non-parallel edges."""
    tree = random_tree(n, rng, wmin, wmax)
    present = set((u, v) for u, v, _ in tree.edges)
    edges = list(tree.edges)
    candidates = [(i, j) for i in range(n) for j in range(i + 1, n)
                  if (i, j) not in present]
    rng.shuffle(candidates)
    for u, v in candidates[:extra_edges]:
        edges.append((u, v, float(rng.uniform(wmin, wmax))))
    return build_graph(edges)
