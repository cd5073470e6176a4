"""Weighted undirected graphs, their Laplacians, and basic graph surgery.

Vertices are dense integers 0..n-1.  Edges are stored canonically as
(u, v, weight) with u < v; parallel edges are merged at construction by
summing weights (parallel resistors), and self-loops are rejected.  All
matrices are dense; the target scale is a few hundred vertices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import Disconnected, NonPositiveWeight, SelfLoop, SinkIsWholeGraph


@dataclass(frozen=True)
class Graph:
    """Immutable weighted undirected graph.

    Attributes
    ----------
    n : number of vertices (ids 0..n-1)
    edges : tuple of (u, v, weight) with u < v, no duplicates, weight > 0
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edge endpoints and weights as parallel arrays (eu, ev, ew)."""
        if not self.edges:
            z = np.zeros(0)
            return z.astype(int), z.astype(int), z
        eu, ev, ew = zip(*self.edges)
        return np.array(eu, dtype=int), np.array(ev, dtype=int), np.array(ew, dtype=float)

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n)
        eu, ev, ew = self.edge_arrays
        np.add.at(d, eu, ew)
        np.add.at(d, ev, ew)
        return d

    @cached_property
    def weight_matrix(self) -> np.ndarray:
        w = np.zeros((self.n, self.n))
        for u, v, wt in self.edges:
            w[u, v] = wt
            w[v, u] = wt
        return w

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, float], ...], ...]:
        """Per-vertex tuple of (neighbor, weight) pairs, for O(deg) iteration."""
        nbrs: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        for u, v, wt in self.edges:
            nbrs[u].append((v, wt))
            nbrs[v].append((u, wt))
        return tuple(tuple(a) for a in nbrs)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        """Canonical (u, v) with u < v mapped to its position in ``edges``."""
        return {(u, v): i for i, (u, v, _) in enumerate(self.edges)}

    def neighbors(self, x: int) -> tuple[tuple[int, float], ...]:
        return self.adjacency[x]

    def weight(self, x: int, y: int) -> float:
        """Weight of edge (x, y), or 0.0 if absent."""
        key = (x, y) if x < y else (y, x)
        i = self.edge_index.get(key)
        return self.edges[i][2] if i is not None else 0.0

    def total_weight(self) -> float:
        return float(sum(w for _, _, w in self.edges))

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        seen = {0}
        stack = [0]
        while stack:
            x = stack.pop()
            for y, _ in self.adjacency[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return len(seen) == self.n

    def components(self) -> list[set[int]]:
        left = set(range(self.n))
        comps = []
        while left:
            root = min(left)
            seen = {root}
            stack = [root]
            while stack:
                x = stack.pop()
                for y, _ in self.adjacency[x]:
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
            comps.append(seen)
            left -= seen
        return comps


@dataclass(frozen=True)
class Laplacian:
    """Dense Laplacian L = D - A with the degree vector kept alongside."""

    matrix: np.ndarray
    degrees: np.ndarray


def build_graph(edge_list: Iterable[Sequence], n: int | None = None) -> Graph:
    """Build a graph from (u, v, weight) triples.

    Duplicate (u, v) pairs are merged by summing weights.  Vertex count is
    ``n`` when given, otherwise 1 + the largest endpoint id.
    """
    merged: dict[tuple[int, int], float] = {}
    max_id = -1
    for item in edge_list:
        u, v, w = int(item[0]), int(item[1]), float(item[2])
        if u == v:
            raise SelfLoop(f"self-loop at vertex {u}")
        if not (w > 0.0 and math.isfinite(w)):
            raise NonPositiveWeight(f"edge ({u},{v}) has weight {w}")
        if u < 0 or v < 0:
            raise ValueError(f"negative vertex id in edge ({u},{v})")
        key = (u, v) if u < v else (v, u)
        merged[key] = merged.get(key, 0.0) + w
        max_id = max(max_id, u, v)
    count = max_id + 1 if n is None else int(n)
    if count <= max_id:
        raise ValueError(f"n={count} too small for edge endpoint {max_id}")
    edges = tuple((u, v, merged[(u, v)]) for (u, v) in sorted(merged))
    return Graph(n=count, edges=edges)


def laplacian(g: Graph) -> Laplacian:
    """Laplacian L = D - A of the graph; rows sum to zero."""
    mat = np.diag(g.degrees) - g.weight_matrix
    return Laplacian(matrix=mat, degrees=g.degrees.copy())


def merge_sink(g: Graph, sink: Iterable[int]) -> tuple[Graph, int]:
    """Identify all vertices of ``sink`` into one vertex.

    Kept vertices are renumbered in increasing order of their original id;
    the merged vertex gets the last id.  Edges internal to the sink are
    dropped, parallel edges arising from the merge are summed.  Returns the
    new graph and the merged-vertex id.
    """
    m = set(int(x) for x in sink)
    if not m:
        raise ValueError("sink must be nonempty")
    if not m.issubset(range(g.n)):
        raise ValueError("sink contains unknown vertex ids")
    kept = [x for x in range(g.n) if x not in m]
    if not kept:
        raise SinkIsWholeGraph("cannot merge every vertex into the sink")
    new_id = {x: i for i, x in enumerate(kept)}
    merged_id = len(kept)
    out: list[tuple[int, int, float]] = []
    for u, v, w in g.edges:
        if u in m and v in m:
            continue
        a = merged_id if u in m else new_id[u]
        b = merged_id if v in m else new_id[v]
        out.append((a, b, w))
    return build_graph(out, n=merged_id + 1), merged_id


def append_vertex(g: Graph, at: int, weight: float) -> tuple[Graph, int]:
    """Attach a fresh vertex to ``at`` by a single edge of the given weight."""
    if not (0 <= at < g.n):
        raise ValueError(f"vertex {at} not in graph")
    if not (weight > 0.0 and math.isfinite(weight)):
        raise NonPositiveWeight(f"append weight {weight}")
    new = g.n
    return build_graph(list(g.edges) + [(at, new, weight)], n=g.n + 1), new


def split_edges(g: Graph) -> Graph:
    """Replace every edge (x, y, w) by a midpoint vertex with two w-edges.

    The midpoint of the i-th edge of ``g`` (canonical ordering) gets id
    ``g.n + i``; this convention is relied on by callers that decorate the
    midpoints afterwards.  The series pair has effective conductance w/2.
    """
    out: list[tuple[int, int, float]] = []
    for i, (u, v, w) in enumerate(g.edges):
        mid = g.n + i
        out.append((u, mid, w))
        out.append((mid, v, w))
    return build_graph(out, n=g.n + len(g.edges))


@dataclass(frozen=True)
class FlowProblem:
    """A source vertex and a nonempty sink set on a connected graph."""

    graph: Graph
    source: int
    sink: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "sink", frozenset(int(x) for x in self.sink))
        if not self.sink:
            raise ValueError("sink must be nonempty")
        if not all(0 <= x < self.graph.n for x in self.sink):
            raise ValueError("sink contains unknown vertex ids")
        if not (0 <= self.source < self.graph.n):
            raise ValueError(f"source {self.source} not in graph")
        if self.source in self.sink:
            raise ValueError("source must not be a sink vertex")
        if not self.graph.is_connected():
            raise Disconnected("flow problems require a connected graph")

    @property
    def interior(self) -> tuple[int, ...]:
        """Non-sink vertices in increasing order."""
        return tuple(x for x in range(self.graph.n) if x not in self.sink)


def graph_to_json(g: Graph) -> str:
    return json.dumps({"n": g.n, "edges": [[u, v, w] for u, v, w in g.edges]})


def graph_from_json(text: str) -> Graph:
    doc = json.loads(text)
    return build_graph(doc["edges"], n=doc["n"])
