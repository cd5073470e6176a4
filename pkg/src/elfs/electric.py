"""Exact electric flows: voltages, effective resistance, and edge sampling.

The unit electric flow from a source s to a sink set M is obtained from the
grounded Laplacian solve L_UU x = e_s on U = V \\ M.  Voltages are zero on
the sink, v_s equals the effective resistance R_s, and edge flows follow
f_xy = w_xy (v_x - v_y).  Everything is dense double precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import IdentityViolation, SingularSystem
from .graph import FlowProblem, Graph

# Any voltage outside [0, R_s] or conservation residual beyond these bounds
# marks a failed solve and is raised, never repaired.
_CONSERVATION_TOL = 1e-9
_MONOTONICITY_TOL = 1e-8
_PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ElectricFlow:
    """Unit electric flow for one source/sink pair.

    ``voltages`` has one entry per vertex (zero on the sink), ``edge_flows``
    one signed entry per canonical edge (u, v), positive when flowing from
    u to v.  ``resistance`` is R_s = v_s, which also equals the flow energy.
    """

    problem: FlowProblem
    voltages: np.ndarray
    edge_flows: np.ndarray
    resistance: float

    @property
    def graph(self) -> Graph:
        return self.problem.graph

    @property
    def energy(self) -> float:
        _, _, ew = self.graph.edge_arrays
        return float(np.sum(self.edge_flows**2 / ew))

    def flow(self, x: int, y: int) -> float:
        """Signed flow from x to y (antisymmetric)."""
        i = self.graph.edge_index.get((x, y) if x < y else (y, x))
        if i is None:
            return 0.0
        f = self.edge_flows[i]
        return float(f if x < y else -f)

    def net_into(self, y: int) -> float:
        """Net flow into vertex y; equals the arrival probability for y in M."""
        total = 0.0
        for x, w in self.graph.neighbors(y):
            total += w * (self.voltages[x] - self.voltages[y])
        return float(total)


def solve_flow(problem: FlowProblem) -> ElectricFlow:
    """Solve the unit electric flow for ``problem``.

    Raises SingularSystem if the grounded solve fails or violates the
    voltage bounds; on connected input this indicates an internal error.
    """
    g = problem.graph
    interior = list(problem.interior)
    lap = np.diag(g.degrees) - g.weight_matrix
    luu = lap[np.ix_(interior, interior)]
    rhs = np.zeros(len(interior))
    rhs[interior.index(problem.source)] = 1.0
    try:
        x = scipy.linalg.solve(luu, rhs, assume_a="pos")
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - guarded by FlowProblem
        raise SingularSystem(f"grounded Laplacian solve failed: {exc}") from exc

    v = np.zeros(g.n)
    v[interior] = x
    rs = float(v[problem.source])

    eu, ev, ew = g.edge_arrays
    flows = ew * (v[eu] - v[ev])

    # Flow conservation at every interior vertex: sum_y f_xy = delta_sx.
    net = np.zeros(g.n)
    np.add.at(net, eu, flows)
    np.add.at(net, ev, -flows)
    expect = np.zeros(g.n)
    expect[problem.source] = 1.0
    residual = np.max(np.abs(net[interior] - expect[interior]))
    if residual > _CONSERVATION_TOL:
        raise SingularSystem(f"flow conservation violated by {residual:.3e}")
    if np.min(v) < -_MONOTONICITY_TOL or np.max(v) > rs + _MONOTONICITY_TOL:
        raise SingularSystem("voltages escape [0, R_s]")

    return ElectricFlow(problem=problem, voltages=v, edge_flows=flows, resistance=rs)


def effective_resistance(g: Graph, a: int, b: int) -> float:
    """Effective resistance between two vertices."""
    if a == b:
        raise ValueError("effective resistance needs two distinct vertices")
    return solve_flow(FlowProblem(g, a, frozenset([b]))).resistance


@dataclass(frozen=True)
class FlowSampleDist:
    """Probabilities p_e = f_e^2 / (R_s w_e) over the canonical edge list."""

    flow: ElectricFlow
    probs: np.ndarray

    @cached_property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.probs)


def sample_dist(flow: ElectricFlow) -> FlowSampleDist:
    """Edge sampling distribution of the electric flow.

    Exact-zero flows get exact-zero probability.  The probabilities are
    renormalized by their sum, which must already be within 1e-9 of one.
    """
    _, _, ew = flow.graph.edge_arrays
    p = np.where(flow.edge_flows == 0.0, 0.0,
                 flow.edge_flows**2 / (flow.resistance * ew))
    total = p.sum()
    if abs(total - 1.0) > _PROB_SUM_TOL:
        raise IdentityViolation(f"edge probabilities sum to {total!r}")
    return FlowSampleDist(flow=flow, probs=p / total)


def draw_edge(dist: FlowSampleDist, rng: np.random.Generator) -> tuple[int, int]:
    """Draw one undirected edge by inverse CDF over the fixed edge ordering."""
    i = int(np.searchsorted(dist.cumulative, rng.random(), side="right"))
    i = min(i, len(dist.probs) - 1)
    u, v, _ = dist.flow.graph.edges[i]
    return (u, v)


def draw_edge_indices(dist: FlowSampleDist, size: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Vectorized variant of draw_edge returning edge indices.

    Consumes one uniform per draw, so a batch equals ``size`` single draws
    from the same generator state.
    """
    idx = np.searchsorted(dist.cumulative, rng.random(size), side="right")
    return np.minimum(idx, len(dist.probs) - 1)
