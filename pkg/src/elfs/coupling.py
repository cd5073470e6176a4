"""Random walks coupled to the sampling process through stopping rules.

A plain absorbing random walk, stopped at each vertex visit with probability
p_x = w_xx' / (w_xx' + d_x) where w_xx' = sum_y ((v_x - v_y)/v_x)^2 w_xy,
stops exactly with the one-step law of the sampling process, and the
expected stop index is ET_s / 2.  An analogous per-edge rule with
p_xy = (v_x - v_y)^2 / (v_x^2 + v_y^2) reproduces the edge-sampling law.
Both rules are realizable as plain walks on explicitly modified graphs,
which this module also builds for oracle checks.  The escape-time identity
E[esc] = ET_s and its Doob-transform derivation round out the picture.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from .electric import ElectricFlow, solve_flow
from .errors import IdentityViolation, StepLimitExceeded
from .graph import FlowProblem, Graph, build_graph
from .process import DEFAULT_STEP_LIMIT, grounded_voltages


# ---------------------------------------------------------------------------
# plain absorbing random walks
# ---------------------------------------------------------------------------

def walk_matrix(g: Graph) -> np.ndarray:
    """Random-walk transition matrix P = D^-1 A."""
    return g.weight_matrix / g.degrees[:, None]


@dataclass(frozen=True)
class RwTrace:
    """A recorded absorbing walk X_0..X_tau, with optional stop index."""

    vertices: tuple[int, ...]
    nu: int | None = None

    @property
    def tau(self) -> int:
        return len(self.vertices) - 1

    @property
    def esc(self) -> int:
        """1 + last time the walk sat at its start vertex."""
        start = self.vertices[0]
        return 1 + max(t for t, x in enumerate(self.vertices) if x == start)


def simulate_rw(g: Graph, s: int, sink: Iterable[int], rng: np.random.Generator,
                step_limit: int = DEFAULT_STEP_LIMIT) -> RwTrace:
    """Run one random walk from s until it is absorbed in the sink."""
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    cum = np.cumsum(walk_matrix(g), axis=1)
    path = [s]
    x = s
    while x not in sink_set:
        if len(path) > step_limit:
            raise StepLimitExceeded(f"walk not absorbed within {step_limit} steps")
        x = int(np.searchsorted(cum[x], rng.random(), side="right"))
        x = min(x, g.n - 1)
        path.append(x)
    return RwTrace(vertices=tuple(path))


@dataclass(frozen=True)
class RwEnsemble:
    """Per-walker statistics of a batch of absorbing walks."""

    steps: np.ndarray
    arrival: np.ndarray
    esc: np.ndarray
    visits_source: np.ndarray
    visits_within: np.ndarray | None = None


def _step_rows(cum: np.ndarray, pos: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(len(pos))
    nxt = (u[:, None] > cum[pos]).sum(axis=1)
    return np.minimum(nxt, cum.shape[1] - 1)


def rw_ensemble(g: Graph, s: int, sink: Iterable[int], runs: int,
                rng: np.random.Generator, step_limit: int = DEFAULT_STEP_LIMIT,
                count_within: int | None = None) -> RwEnsemble:
    """Vectorized batch of absorbing walks from s.

    Visit counts to the source include the start at t = 0.  When
    ``count_within`` is given, ``visits_within`` counts only the visits
    among X_0..X_count_within of the same trajectories.
    """
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    sink_mask = np.zeros(g.n, dtype=bool)
    sink_mask[list(sink_set)] = True
    cum = np.cumsum(walk_matrix(g), axis=1)

    pos = np.full(runs, s, dtype=int)
    steps = np.zeros(runs, dtype=int)
    visits = np.ones(runs, dtype=int)
    within = np.ones(runs, dtype=int) if count_within is not None else None
    last_at_source = np.zeros(runs, dtype=int)
    active = np.ones(runs, dtype=bool)
    t = 0
    while active.any():
        if t >= step_limit:
            raise StepLimitExceeded(f"walks not absorbed within {step_limit} steps")
        idx = np.flatnonzero(active)
        pos[idx] = _step_rows(cum, pos[idx], rng)
        steps[idx] += 1
        t += 1
        at_source = idx[pos[idx] == s]
        visits[at_source] += 1
        last_at_source[at_source] = t
        if within is not None and t <= count_within:
            within[at_source] += 1
        absorbed = idx[sink_mask[pos[idx]]]
        active[absorbed] = False
    return RwEnsemble(steps=steps, arrival=pos.copy(), esc=last_at_source + 1,
                      visits_source=visits, visits_within=within)


# ---------------------------------------------------------------------------
# vertex stopping rule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VertexStoppingRule:
    """Per-vertex stop probabilities derived from one fixed electric flow.

    ``pendant_weights`` holds the w_xx' of the equivalent modified graph;
    both arrays are zero on sink and zero-voltage vertices, where the rule
    is never consulted (absorption or unreachability take precedence).
    """

    flow: ElectricFlow
    stop_probs: np.ndarray
    pendant_weights: np.ndarray


def vertex_rule(flow: ElectricFlow) -> VertexStoppingRule:
    g = flow.graph
    v = flow.voltages
    d = g.degrees
    eu, ev, ew = g.edge_arrays
    pend = np.zeros(g.n)
    dv2 = (v[eu] - v[ev]) ** 2 * ew
    positive = v > 0.0
    # sum ((v_x - v_y)/v_x)^2 w_xy over neighbors, for each positive-voltage x
    np.add.at(pend, eu, np.where(positive[eu], dv2, 0.0))
    np.add.at(pend, ev, np.where(positive[ev], dv2, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        pend = np.where(positive, pend / np.where(positive, v**2, 1.0), 0.0)
    probs = np.where(positive, pend / (pend + d), 0.0)
    return VertexStoppingRule(flow=flow, stop_probs=probs, pendant_weights=pend)


def rule_modified_graph(rule: VertexStoppingRule) -> tuple[Graph, dict[int, int]]:
    """Explicit pendant-sink graph realizing the vertex rule as a plain walk.

    Appends to every positive-weight vertex x a fresh vertex x' joined by an
    edge of weight w_xx'.  Returns the graph and the map pendant id -> x.
    """
    g = rule.flow.graph
    edges = list(g.edges)
    pendants: dict[int, int] = {}
    nxt = g.n
    for x in range(g.n):
        w = rule.pendant_weights[x]
        if w > 0.0:
            edges.append((x, nxt, float(w)))
            pendants[nxt] = x
            nxt += 1
    return build_graph(edges, n=nxt), pendants


@dataclass(frozen=True)
class CoupledStep:
    vertex: int
    nu: int


def run_coupled_step(g: Graph, s: int, sink: Iterable[int], rng: np.random.Generator,
                     step_limit: int = DEFAULT_STEP_LIMIT,
                     rule: VertexStoppingRule | None = None) -> CoupledStep:
    """One application of the vertex rule to a fresh walk from s.

    The rule is evaluated on every arrival, including t = 0 at the source.
    Returns the stop vertex (distributed as the process's one-step law) and
    the number of walk steps taken.
    """
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    if rule is None:
        rule = vertex_rule(solve_flow(FlowProblem(g, s, sink_set)))
    cum = np.cumsum(walk_matrix(g), axis=1)
    x, t = s, 0
    while True:
        if x in sink_set:
            return CoupledStep(vertex=x, nu=t)
        if rng.random() < rule.stop_probs[x]:
            return CoupledStep(vertex=x, nu=t)
        if t >= step_limit:
            raise StepLimitExceeded(f"no stop within {step_limit} steps")
        x = min(int(np.searchsorted(cum[x], rng.random(), side="right")), g.n - 1)
        t += 1


def coupled_step_ensemble(g: Graph, s: int, sink: Iterable[int], runs: int,
                          rng: np.random.Generator,
                          step_limit: int = DEFAULT_STEP_LIMIT
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized batch of coupled steps; returns (stop vertices, nu)."""
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    rule = vertex_rule(solve_flow(FlowProblem(g, s, sink_set)))
    sink_mask = np.zeros(g.n, dtype=bool)
    sink_mask[list(sink_set)] = True
    cum = np.cumsum(walk_matrix(g), axis=1)

    pos = np.full(runs, s, dtype=int)
    nu = np.zeros(runs, dtype=int)
    active = np.ones(runs, dtype=bool)
    t = 0
    while active.any():
        if t >= step_limit:
            raise StepLimitExceeded(f"no stop within {step_limit} steps")
        idx = np.flatnonzero(active)
        cur = pos[idx]
        finished = sink_mask[cur] | (rng.random(len(idx)) < rule.stop_probs[cur])
        active[idx[finished]] = False
        go = idx[~finished]
        if len(go):
            pos[go] = _step_rows(cum, pos[go], rng)
            nu[go] += 1
        t += 1
    return pos, nu


# ---------------------------------------------------------------------------
# edge stopping rule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeStoppingRule:
    """Per-edge stop probabilities (v_x - v_y)^2 / (v_x^2 + v_y^2).

    Probability 1 exactly when one endpoint voltage is zero and the other
    positive (sink-incident edges); dead edges with two zero voltages are
    unreachable and get probability 0.
    """

    flow: ElectricFlow
    stop_probs: np.ndarray


def edge_rule(flow: ElectricFlow) -> EdgeStoppingRule:
    g = flow.graph
    v = flow.voltages
    eu, ev, _ = g.edge_arrays
    num = (v[eu] - v[ev]) ** 2
    den = v[eu] ** 2 + v[ev] ** 2
    probs = np.divide(num, den, out=np.zeros_like(num), where=den > 0.0)
    return EdgeStoppingRule(flow=flow, stop_probs=probs)


@dataclass(frozen=True)
class _IncidentEdges:
    """Per-vertex incident edge indices with cumulative weight for sampling."""

    indices: tuple[np.ndarray, ...]
    cumweights: tuple[np.ndarray, ...]


def _incident_edges(g: Graph) -> _IncidentEdges:
    per: list[list[int]] = [[] for _ in range(g.n)]
    for i, (u, v, _) in enumerate(g.edges):
        per[u].append(i)
        per[v].append(i)
    _, _, ew = g.edge_arrays
    idx = tuple(np.array(a, dtype=int) for a in per)
    cw = tuple(np.cumsum(ew[a]) / ew[a].sum() if len(a) else np.zeros(0) for a in idx)
    return _IncidentEdges(indices=idx, cumweights=cw)


def run_edge_coupled_step(g: Graph, s: int, sink: Iterable[int],
                          rng: np.random.Generator,
                          step_limit: int = DEFAULT_STEP_LIMIT,
                          rule: EdgeStoppingRule | None = None
                          ) -> tuple[tuple[int, int], int]:
    """Lazy walk with the edge rule; returns (stopped edge, edge picks used).

    From the current vertex an outgoing edge is picked with probability
    w_xy / d_x; the rule decides stopping, otherwise the walk moves to a
    uniform endpoint of the picked edge.
    """
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    if rule is None:
        rule = edge_rule(solve_flow(FlowProblem(g, s, sink_set)))
    inc = _incident_edges(g)
    eu, ev, _ = g.edge_arrays
    x, t = s, 0
    while True:
        if t >= step_limit:
            raise StepLimitExceeded(f"no stop within {step_limit} edge picks")
        arr = inc.indices[x]
        pick = int(arr[min(np.searchsorted(inc.cumweights[x], rng.random(),
                                           side="right"), len(arr) - 1)])
        t += 1
        if rng.random() < rule.stop_probs[pick]:
            u, v, _ = g.edges[pick]
            return (u, v), t
        x = int(eu[pick] if rng.random() < 0.5 else ev[pick])


def edge_coupled_ensemble(g: Graph, s: int, sink: Iterable[int], runs: int,
                          rng: np.random.Generator,
                          step_limit: int = DEFAULT_STEP_LIMIT
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized batch of edge-rule walks; returns (edge indices, picks used)."""
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    rule = edge_rule(solve_flow(FlowProblem(g, s, sink_set)))
    eu, ev, ew = g.edge_arrays
    # per-vertex cumulative distribution over ALL edge slots (zero off-star)
    w_by_vertex = np.zeros((g.n, len(g.edges)))
    w_by_vertex[eu, np.arange(len(eu))] += ew
    w_by_vertex[ev, np.arange(len(ev))] += ew
    cum = np.cumsum(w_by_vertex / g.degrees[:, None], axis=1)

    pos = np.full(runs, s, dtype=int)
    stopped_edge = np.full(runs, -1, dtype=int)
    picks = np.zeros(runs, dtype=int)
    active = np.ones(runs, dtype=bool)
    t = 0
    while active.any():
        if t >= step_limit:
            raise StepLimitExceeded(f"no stop within {step_limit} edge picks")
        idx = np.flatnonzero(active)
        u = rng.random(len(idx))
        pick = np.minimum((u[:, None] > cum[pos[idx]]).sum(axis=1), len(eu) - 1)
        picks[idx] += 1
        halt = rng.random(len(idx)) < rule.stop_probs[pick]
        stopped_edge[idx[halt]] = pick[halt]
        active[idx[halt]] = False
        go = idx[~halt]
        coin = rng.random(len(go)) < 0.5
        pos[go] = np.where(coin, eu[pick[~halt]], ev[pick[~halt]])
        t += 1
    return stopped_edge, picks


def edge_rule_modified_graph(flow: ElectricFlow
                             ) -> tuple[Graph, tuple[int, ...], dict[int, int]]:
    """Split-edge graph whose walk arrival law reproduces the edge rule.

    Every edge (x, y, w) becomes a midpoint vertex with two w-edges; each
    midpoint whose endpoints both carry positive voltage gets a pendant
    sink of weight w (v_x - v_y)^2 / (v_x v_y).  Midpoints of edges with
    exactly one zero-voltage endpoint absorb with certainty, so they join
    the sink set themselves.  Returns the graph, the sink ids, and the map
    sink id -> original edge index.
    """
    g = flow.graph
    v = flow.voltages
    edges = []
    mid_of_edge = {}
    for i, (x, y, w) in enumerate(g.edges):
        mid = g.n + i
        mid_of_edge[i] = mid
        edges.append((x, mid, w))
        edges.append((mid, y, w))
    nxt = g.n + len(g.edges)
    sinks: list[int] = []
    edge_of_sink: dict[int, int] = {}
    for i, (x, y, w) in enumerate(g.edges):
        vx, vy = v[x], v[y]
        if vx > 0.0 and vy > 0.0:
            if vx != vy:
                wp = w * (vx - vy) ** 2 / (vx * vy)
                edges.append((mid_of_edge[i], nxt, float(wp)))
                sinks.append(nxt)
                edge_of_sink[nxt] = i
                nxt += 1
        elif vx > 0.0 or vy > 0.0:
            sinks.append(mid_of_edge[i])
            edge_of_sink[mid_of_edge[i]] = i
    return build_graph(edges, n=nxt), tuple(sinks), edge_of_sink


# ---------------------------------------------------------------------------
# full coupling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FullCoupling:
    """One walk trajectory with the subsampled source sequence riding on it.

    ``nus`` are the global step indices of the stops; consecutive stops may
    share an index because the freshly recomputed rule is evaluated at the
    stop vertex itself before the walk moves on.
    """

    walk: RwTrace
    sources: tuple[int, ...]
    nus: tuple[int, ...]

    @property
    def rho(self) -> int:
        return len(self.nus)


class _RuleTable:
    """Stop probabilities for every source against one sink, from one solve."""

    def __init__(self, g: Graph, sink: frozenset[int]):
        self.graph = g
        self.sink = sink
        interior, vuu = grounded_voltages(g, sink)
        v = np.zeros((g.n, g.n))
        v[np.ix_(interior, interior)] = vuu
        eu, ev, ew = g.edge_arrays
        probs = np.zeros((g.n, g.n))
        d = g.degrees
        for row in interior:
            vs = v[row]
            dv2 = (vs[eu] - vs[ev]) ** 2 * ew
            pend = np.zeros(g.n)
            pos = vs > 0.0
            np.add.at(pend, eu, np.where(pos[eu], dv2, 0.0))
            np.add.at(pend, ev, np.where(pos[ev], dv2, 0.0))
            pend = np.where(pos, pend / np.where(pos, vs**2, 1.0), 0.0)
            probs[row] = np.where(pos, pend / (pend + d), 0.0)
        self.stop_probs = probs


def full_coupling(g: Graph, s: int, sink: Iterable[int], rng: np.random.Generator,
                  step_limit: int = DEFAULT_STEP_LIMIT) -> FullCoupling:
    """Segment one random walk by repeatedly applied vertex rules.

    After each stop the rule is recomputed from the new source; the stop
    sequence has the law of the sampling process while the underlying walk
    is a plain random walk from s.
    """
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    table = _RuleTable(g, sink_set)
    cum = np.cumsum(walk_matrix(g), axis=1)

    path = [s]
    sources = [s]
    nus: list[int] = []
    src, x, t = s, s, 0
    while True:
        if x in sink_set:
            sources.append(x)
            nus.append(t)
            break
        if rng.random() < table.stop_probs[src, x]:
            sources.append(x)
            nus.append(t)
            src = x
            continue
        if t >= step_limit:
            raise StepLimitExceeded(f"walk not absorbed within {step_limit} steps")
        x = min(int(np.searchsorted(cum[x], rng.random(), side="right")), g.n - 1)
        path.append(x)
        t += 1
    return FullCoupling(walk=RwTrace(vertices=tuple(path)), sources=tuple(sources),
                        nus=tuple(nus))


def full_coupling_ensemble(g: Graph, s: int, sink: Iterable[int], runs: int,
                           rng: np.random.Generator,
                           step_limit: int = DEFAULT_STEP_LIMIT
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized full couplings; returns (rho, final nu, arrival vertex)."""
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    table = _RuleTable(g, sink_set)
    sink_mask = np.zeros(g.n, dtype=bool)
    sink_mask[list(sink_set)] = True
    cum = np.cumsum(walk_matrix(g), axis=1)

    pos = np.full(runs, s, dtype=int)
    src = np.full(runs, s, dtype=int)
    rho = np.zeros(runs, dtype=int)
    nu_final = np.zeros(runs, dtype=int)
    active = np.ones(runs, dtype=bool)
    t = 0
    while active.any():
        if t >= step_limit:
            raise StepLimitExceeded(f"walks not absorbed within {step_limit} steps")
        idx = np.flatnonzero(active)
        # absorption ends the trajectory; it counts as the final stop
        absorbed = idx[sink_mask[pos[idx]]]
        rho[absorbed] += 1
        nu_final[absorbed] = t
        active[absorbed] = False
        idx = np.flatnonzero(active)
        # repeated stop tests: each stop moves the source and re-tests
        while len(idx):
            halt = rng.random(len(idx)) < table.stop_probs[src[idx], pos[idx]]
            stopped = idx[halt]
            rho[stopped] += 1
            src[stopped] = pos[stopped]
            idx = stopped
        idx = np.flatnonzero(active)
        pos[idx] = _step_rows(cum, pos[idx], rng)
        t += 1
    return rho, nu_final, pos


# ---------------------------------------------------------------------------
# escape time and the Doob transform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DoobReport:
    """Checks of the voltage-reweighted chain conditioned on returning to s.

    ``conditional_return_formula`` is (ET_s - 1)/(R_s d_s - 1); the same
    quantity is recomputed through Kac's lemma on the reweighted graph.
    Degenerate instances with R_s d_s = 1 (walk never returns before the
    sink) report ``applicable=False`` and carry no return time.
    """

    applicable: bool
    et_s: float
    rd_s: float
    conditional_return_formula: float | None
    conditional_return_kac: float | None
    degree_residual: float
    total_weight_residual: float


def doob_check(g: Graph, s: int, sink: Iterable[int], tol: float = 1e-8) -> DoobReport:
    """Build the conditioned-walk weights and verify their identities."""
    sink_set = frozenset(int(x) for x in sink)
    flow = solve_flow(FlowProblem(g, s, sink_set))
    v = flow.voltages
    d = g.degrees
    rs = flow.resistance
    et_s = float(v @ (v * d)) / rs
    rd = rs * d[s]

    eu, ev, ew = g.edge_arrays
    what = ew * v[eu] * v[ev] / rs**2
    dhat = np.zeros(g.n)
    np.add.at(dhat, eu, what)
    np.add.at(dhat, ev, what)

    positive = np.flatnonzero(v > 0.0)
    expected = d * v**2 / rs**2
    others = positive[positive != s]
    degree_residual = float(np.max(np.abs(dhat[others] - expected[others]))) \
        if len(others) else 0.0
    if degree_residual > tol:
        raise IdentityViolation(f"reweighted degree residual {degree_residual:.3e}")
    dhat_s_expected = d[s] - 1.0 / rs
    if abs(dhat[s] - dhat_s_expected) > tol * max(1.0, abs(dhat_s_expected)):
        raise IdentityViolation("reweighted source degree mismatch")

    total = float(dhat.sum())
    total_expected = (et_s - 1.0) / rs
    total_residual = abs(total - total_expected)
    if total_residual > tol * max(1.0, abs(total_expected)):
        raise IdentityViolation(f"total reweighted mass off by {total_residual:.3e}")

    if abs(rd - 1.0) <= 1e-9:
        return DoobReport(applicable=False, et_s=et_s, rd_s=rd,
                          conditional_return_formula=None, conditional_return_kac=None,
                          degree_residual=degree_residual,
                          total_weight_residual=total_residual)

    formula = (et_s - 1.0) / (rd - 1.0)
    kac = total / dhat[s]
    if abs(kac - formula) > tol * max(1.0, abs(formula)):
        raise IdentityViolation(
            f"Kac return time {kac!r} differs from (ET-1)/(Rd-1) = {formula!r}")
    return DoobReport(applicable=True, et_s=et_s, rd_s=rd,
                      conditional_return_formula=formula, conditional_return_kac=kac,
                      degree_residual=degree_residual,
                      total_weight_residual=total_residual)


def conditional_return_ensemble(g: Graph, s: int, sink: Iterable[int], runs: int,
                                rng: np.random.Generator,
                                step_limit: int = DEFAULT_STEP_LIMIT
                                ) -> tuple[np.ndarray, np.ndarray]:
    """Sample return times to s for walks that return before the sink.

    Returns (returned mask, return time); times are meaningful only where
    the mask is true.
    """
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    sink_mask = np.zeros(g.n, dtype=bool)
    sink_mask[list(sink_set)] = True
    cum = np.cumsum(walk_matrix(g), axis=1)

    pos = np.full(runs, s, dtype=int)
    times = np.zeros(runs, dtype=int)
    returned = np.zeros(runs, dtype=bool)
    active = np.ones(runs, dtype=bool)
    t = 0
    while active.any():
        if t >= step_limit:
            raise StepLimitExceeded(f"no return/absorption within {step_limit} steps")
        idx = np.flatnonzero(active)
        pos[idx] = _step_rows(cum, pos[idx], rng)
        t += 1
        back = idx[pos[idx] == s]
        returned[back] = True
        times[back] = t
        active[back] = False
        gone = idx[sink_mask[pos[idx]]]
        active[gone] = False
    return returned, times
