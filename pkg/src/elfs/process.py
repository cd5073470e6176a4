"""The electric-flow-sampling process: exact chain algebra and simulation.

For a fixed sink M, one step of the process from source s samples an edge e
with probability f_e^2 / (R_s w_e) from the unit electric s-M flow and moves
the source to a uniformly random endpoint of e.  The induced vertex chain
has the closed-form transition matrix

    Q_sx = 1/(2 R_s) * sum_y (v_x - v_y)^2 w_xy,

built here row by row from per-source electric solves.  Absorbing-chain
algebra on Q then gives the electric hitting time, arrival distribution,
and the step identities relating it to the plain random walk.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.linalg

from .electric import ElectricFlow, FlowSampleDist, sample_dist, solve_flow
from .errors import Disconnected, IdentityViolation, OracleMismatch, StepLimitExceeded
from .graph import FlowProblem, Graph

_NEGATIVE_CLAMP = 1e-12
_ROW_SUM_TOL = 1e-10

DEFAULT_STEP_LIMIT = 10**7


class ElfsSampler:
    """Per-source electric flows and edge distributions, cached for one sink."""

    def __init__(self, g: Graph, sink: Iterable[int]):
        self.graph = g
        self.sink = frozenset(int(x) for x in sink)
        self._flows: dict[int, ElectricFlow] = {}
        self._dists: dict[int, FlowSampleDist] = {}

    def flow(self, source: int) -> ElectricFlow:
        if source not in self._flows:
            self._flows[source] = solve_flow(FlowProblem(self.graph, source, self.sink))
        return self._flows[source]

    def dist(self, source: int) -> FlowSampleDist:
        if source not in self._dists:
            self._dists[source] = sample_dist(self.flow(source))
        return self._dists[source]


@dataclass(frozen=True)
class ElfsChain:
    """Exact transition matrix of the process plus its electric ingredients.

    ``q`` is row-stochastic over all vertices with identity rows on the
    sink.  ``voltages`` holds v^x_y (row x = voltages of the flow sourced
    at x), zero on sink rows and columns; ``resistance`` holds R_x per
    interior vertex and zero on the sink.
    """

    graph: Graph
    sink: frozenset[int]
    q: np.ndarray
    voltages: np.ndarray
    resistance: np.ndarray

    @cached_property
    def interior(self) -> tuple[int, ...]:
        return tuple(x for x in range(self.graph.n) if x not in self.sink)

    @cached_property
    def sink_sorted(self) -> tuple[int, ...]:
        return tuple(sorted(self.sink))

    @property
    def q_uu(self) -> np.ndarray:
        idx = list(self.interior)
        return self.q[np.ix_(idx, idx)]

    @property
    def q_um(self) -> np.ndarray:
        return self.q[np.ix_(list(self.interior), list(self.sink_sorted))]

    def fundamental_solve(self, b: np.ndarray) -> np.ndarray:
        """(I - Q_UU)^-1 b, the absorbing-chain visit accumulator."""
        return scipy.linalg.solve(np.eye(len(self.interior)) - self.q_uu, b)

    def expected_steps(self) -> np.ndarray:
        """Electric hitting time per interior vertex."""
        return self.fundamental_solve(np.ones(len(self.interior)))

    def absorption_distribution(self, source: int) -> np.ndarray:
        """Arrival distribution over sorted sink vertices, from the chain."""
        row = self.interior.index(source)
        return self.fundamental_solve(self.q_um)[row]


def escape_time(flow: ElectricFlow) -> float:
    """ET_s = (1/R_s) sum_x v_x^2 d_x for the flow's source."""
    v = flow.voltages
    return float(v @ (v * flow.graph.degrees)) / flow.resistance


def grounded_voltages(g: Graph, sink: Iterable[int]) -> tuple[list[int], np.ndarray]:
    """All-sources voltage matrix (L_UU)^-1 for one sink.

    Returns the sorted interior vertex list and the symmetric matrix whose
    row x holds the voltages v^x_y of the unit flow sourced at x, restricted
    to interior columns.  One Cholesky solve serves every source.
    """
    sink_set = frozenset(int(x) for x in sink)
    if not sink_set:
        raise ValueError("sink must be nonempty")
    if not g.is_connected():
        raise Disconnected("grounded voltages require a connected graph")
    interior = [x for x in range(g.n) if x not in sink_set]
    if not interior:
        raise ValueError("sink covers the whole graph")
    lap = np.diag(g.degrees) - g.weight_matrix
    luu = lap[np.ix_(interior, interior)]
    cho = scipy.linalg.cho_factor(luu)
    vuu = scipy.linalg.cho_solve(cho, np.eye(len(interior)))
    return interior, 0.5 * (vuu + vuu.T)


def elfs_transition_matrix(g: Graph, sink: Iterable[int],
                           chunk: int = 64) -> ElfsChain:
    """Build the exact transition matrix from per-source electric solves."""
    sink_set = frozenset(int(x) for x in sink)
    interior, vuu = grounded_voltages(g, sink_set)
    n = g.n
    voltages = np.zeros((n, n))
    voltages[np.ix_(interior, interior)] = vuu
    resistance = np.zeros(n)
    resistance[interior] = np.diag(vuu)

    eu, ev, ew = g.edge_arrays
    q = np.zeros((n, n))
    rows = np.array(interior)
    for start in range(0, len(rows), chunk):
        blk = rows[start:start + chunk]
        diff = voltages[np.ix_(blk, eu)] - voltages[np.ix_(blk, ev)]
        contrib = diff**2 * ew / (2.0 * resistance[blk])[:, None]
        local = np.arange(len(blk))[:, None]
        # each sampled edge puts half its mass on either endpoint
        block_q = np.zeros((len(blk), n))
        np.add.at(block_q, (local, eu[None, :]), contrib)
        np.add.at(block_q, (local, ev[None, :]), contrib)
        q[blk] = block_q
    for m in sink_set:
        q[m, m] = 1.0

    worst = q.min()
    if worst < -_NEGATIVE_CLAMP:
        raise IdentityViolation(f"transition entry {worst:.3e} below clamp window")
    np.clip(q, 0.0, None, out=q)
    sums = q.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > _ROW_SUM_TOL:
        raise IdentityViolation("transition rows do not sum to one")
    q /= sums[:, None]

    return ElfsChain(graph=g, sink=sink_set, q=q,
                     voltages=voltages, resistance=resistance)


@dataclass(frozen=True)
class WalkFunctionals:
    """Per-vertex hitting time, escape time, electric hitting time.

    Entries on sink vertices are zero.  ``resistance`` and ``degrees``
    carry R_x and d_x for the bound chain 1 <= R_x d_x <= ET_x <= HT_x.
    """

    graph: Graph
    sink: frozenset[int]
    source: int
    ht: np.ndarray
    et: np.ndarray
    eht: np.ndarray
    resistance: np.ndarray
    degrees: np.ndarray

    @property
    def ht_s(self) -> float:
        return float(self.ht[self.source])

    @property
    def et_s(self) -> float:
        return float(self.et[self.source])

    @property
    def eht_s(self) -> float:
        return float(self.eht[self.source])

    @property
    def rd_s(self) -> float:
        return float(self.resistance[self.source] * self.degrees[self.source])


def exact_functionals(g: Graph, s: int, sink: Iterable[int],
                      chain: ElfsChain | None = None) -> WalkFunctionals:
    """HT and ET from voltages and degrees, EHT from the chain's fundamental matrix."""
    if chain is None:
        chain = elfs_transition_matrix(g, sink)
    sink_set = chain.sink
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    interior = list(chain.interior)
    d = g.degrees
    vuu = chain.voltages[np.ix_(interior, interior)]
    rs = chain.resistance[interior]

    ht = np.zeros(g.n)
    et = np.zeros(g.n)
    eht = np.zeros(g.n)
    ht[interior] = vuu @ d[interior]
    et[interior] = (vuu**2 @ d[interior]) / rs
    eht[interior] = chain.expected_steps()
    return WalkFunctionals(graph=g, sink=sink_set, source=s, ht=ht, et=et,
                           eht=eht, resistance=chain.resistance.copy(),
                           degrees=d.copy())


@dataclass(frozen=True)
class ElfsTrace:
    """One recorded trajectory: sources Y_0..Y_rho and the sampled edges."""

    sources: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def rho(self) -> int:
        return len(self.edges)


def simulate_elfs(g: Graph, s: int, sink: Iterable[int], rng: np.random.Generator,
                  step_limit: int = DEFAULT_STEP_LIMIT,
                  sampler: ElfsSampler | None = None) -> ElfsTrace:
    """Run the process to absorption, recording sources and sampled edges."""
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    if sampler is None:
        sampler = ElfsSampler(g, sink_set)
    sources = [s]
    edges: list[tuple[int, int]] = []
    x = s
    while x not in sink_set:
        if len(edges) >= step_limit:
            raise StepLimitExceeded(f"no absorption within {step_limit} samples")
        dist = sampler.dist(x)
        cum = dist.cumulative
        i = min(int(np.searchsorted(cum, rng.random(), side="right")), len(cum) - 1)
        u, v, _ = g.edges[i]
        x = u if rng.random() < 0.5 else v
        edges.append((u, v))
        sources.append(x)
    return ElfsTrace(sources=tuple(sources), edges=tuple(edges))


def elfs_ensemble(g: Graph, s: int, sink: Iterable[int], runs: int,
                  rng: np.random.Generator,
                  step_limit: int = DEFAULT_STEP_LIMIT) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized batch of independent runs; returns (rho, arrival vertex)."""
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    sampler = ElfsSampler(g, sink_set)
    eu, ev, _ = g.edge_arrays
    sink_mask = np.zeros(g.n, dtype=bool)
    sink_mask[list(sink_set)] = True

    pos = np.full(runs, s, dtype=int)
    rho = np.zeros(runs, dtype=int)
    active = np.ones(runs, dtype=bool)
    steps = 0
    while active.any():
        if steps >= step_limit:
            raise StepLimitExceeded(f"no absorption within {step_limit} samples")
        idx = np.flatnonzero(active)
        for u in np.unique(pos[idx]):
            at = idx[pos[idx] == u]
            cum = sampler.dist(int(u)).cumulative
            ei = np.minimum(np.searchsorted(cum, rng.random(len(at)), side="right"),
                            len(cum) - 1)
            coin = rng.random(len(at)) < 0.5
            pos[at] = np.where(coin, eu[ei], ev[ei])
            rho[at] += 1
        absorbed = active & sink_mask[pos]
        active &= ~absorbed
        steps += 1
    return rho, pos


def step_sample_frequencies(g: Graph, s: int, sink: Iterable[int], samples: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Empirical next-source frequencies of a single process step from s."""
    sampler = ElfsSampler(g, sink)
    dist = sampler.dist(s)
    eu, ev, _ = g.edge_arrays
    idx = np.minimum(np.searchsorted(dist.cumulative, rng.random(samples), side="right"),
                     len(dist.probs) - 1)
    coin = rng.random(samples) < 0.5
    picks = np.where(coin, eu[idx], ev[idx])
    return np.bincount(picks, minlength=g.n) / samples


def elfs_arrival_distribution(g: Graph, s: int, sink: Iterable[int],
                              chain: ElfsChain | None = None,
                              tol: float = 1e-8) -> np.ndarray:
    """Arrival distribution over sorted sink vertices, computed two ways.

    Route one is absorbing-chain algebra on Q; route two is the net
    electric flow into each sink vertex.  Disagreement beyond ``tol``
    raises OracleMismatch.
    """
    if chain is None:
        chain = elfs_transition_matrix(g, sink)
    if s in chain.sink:
        raise ValueError("source must not be a sink vertex")
    via_chain = chain.absorption_distribution(s)
    flow = solve_flow(FlowProblem(g, s, chain.sink))
    via_flow = np.array([flow.net_into(y) for y in chain.sink_sorted])
    gap = np.max(np.abs(via_chain - via_flow))
    if gap > tol:
        raise OracleMismatch(f"chain and flow arrival distributions differ by {gap:.3e}")
    return via_chain


@dataclass(frozen=True)
class StepIdentityReport:
    """Residuals of the one-step identities tying Q to HT, ET and voltages."""

    ht_drop_residual: float
    potential_residual: float
    et_sum_residual: float
    ht_s: float
    et_s: float
    eht_s: float

    @property
    def max_residual(self) -> float:
        return max(self.ht_drop_residual, self.potential_residual,
                   self.et_sum_residual)


def check_step_identities(g: Graph, s: int, sink: Iterable[int],
                          chain: ElfsChain | None = None,
                          tol: float = 1e-8) -> StepIdentityReport:
    """Assert the three exact one-step identities of the process.

    (i)  sum_x Q_sx HT_x = HT_s - ET_s / 2
    (ii) E_x[v^s_Y] = v^s_x (1 - v^s_x / (2 R_x)) for every interior x
    (iii) expected total escape time along the process = 2 HT_s
    """
    if chain is None:
        chain = elfs_transition_matrix(g, sink)
    fn = exact_functionals(g, s, chain.sink, chain=chain)
    interior = list(chain.interior)
    row = interior.index(s)

    lhs = float(chain.q[s] @ fn.ht)
    rhs = fn.ht_s - fn.et_s / 2.0
    ht_drop = abs(lhs - rhs)
    if ht_drop > tol * max(1.0, abs(rhs)):
        raise IdentityViolation(
            f"hitting-time drop: Q HT = {lhs!r} but HT - ET/2 = {rhs!r}")

    vs = chain.voltages[s]
    r_int = chain.resistance[interior]
    # v^s is zero on the sink, so only interior columns of Q contribute
    expected = chain.q[np.ix_(interior, interior)] @ vs[interior]
    predicted = vs[interior] * (1.0 - vs[interior] / (2.0 * r_int))
    potential = float(np.max(np.abs(expected - predicted)))
    if potential > tol * max(1.0, float(np.max(np.abs(predicted)))):
        raise IdentityViolation(f"potential update residual {potential:.3e}")

    et_total = float(chain.fundamental_solve(fn.et[interior])[row])
    et_sum = abs(et_total - 2.0 * fn.ht_s)
    if et_sum > tol * max(1.0, 2.0 * fn.ht_s):
        raise IdentityViolation(
            f"escape-time sum {et_total!r} differs from 2 HT = {2 * fn.ht_s!r}")

    return StepIdentityReport(ht_drop_residual=ht_drop, potential_residual=potential,
                              et_sum_residual=et_sum, ht_s=fn.ht_s, et_s=fn.et_s,
                              eht_s=fn.eht_s)


def jensen_sqrt_chain(g: Graph, s: int, sink: Iterable[int],
                      chain: ElfsChain | None = None) -> tuple[float, float, float, float]:
    """Exact terms of EHT <= E[sum sqrt(ET)] <= sqrt(2 HT EHT) <= 2 HT."""
    if chain is None:
        chain = elfs_transition_matrix(g, sink)
    fn = exact_functionals(g, s, chain.sink, chain=chain)
    interior = list(chain.interior)
    row = interior.index(s)
    mid = float(chain.fundamental_solve(np.sqrt(fn.et[interior]))[row])
    return fn.eht_s, mid, float(np.sqrt(2.0 * fn.ht_s * fn.eht_s)), 2.0 * fn.ht_s
