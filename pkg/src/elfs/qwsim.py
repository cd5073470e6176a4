"""Dense simulator of the absorbing quantum walk on the directed-edge space.

The walk operator is U = swap * C, where C reflects each interior star
around its star state (2|phi_x><phi_x| - I) and negates the stars of the
source and sink vertices; equivalently, U is the product of the
reflections around the interior star span and the symmetric subspace.
Its fixed space is spanned by the electric flow state and the flows that
are closed outside the sink, so projecting the antisymmetrized source
star onto it prepares the flow state.

Phase estimation is modeled analytically: the exact t-bit outcome kernel
|2^-t sum_j exp(i j theta)|^2 gives the probability of reading "0" and the
post-measurement state in closed form from the spectrum, which is
bit-exact in distribution without a 2^t-dimensional register.  Costs are
accounted as 2^t controlled-walk applications per round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable

import numpy as np
import scipy.linalg

from .electric import ElectricFlow, solve_flow
from .errors import (DimensionOverflow, IdentityViolation, InvalidBound,
                     PrecisionOverflow, StepLimitExceeded)
from .graph import FlowProblem, Graph, append_vertex
from .process import escape_time

DEFAULT_DIMENSION_CAP = 2048
MAX_PHASE_BITS = 14
_PHASE_ZERO_TOL = 1e-9
_UNITARITY_TOL = 1e-10

# amplitude estimation at precision 1/8 is charged as 8 extra rounds
AE_ROUNDS = 8

# Realization constant of the cumulative cost cap: the asymptotic cap
# (T/eps) * eht * log2(ht/eht) is scaled by this factor to absorb the
# amplitude-estimation rounds, power-of-two register sizes, and retry
# geometry of the concrete sampler.  Recorded in every result.
COST_CAP_CONSTANT = 64


# ---------------------------------------------------------------------------
# edge space and states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeSpace:
    """Ordered basis of directed edges: slots 2i and 2i+1 hold |uv> and |vu>
    for the i-th canonical edge (u, v)."""

    graph: Graph

    @property
    def dim(self) -> int:
        return 2 * len(self.graph.edges)

    @cached_property
    def tails(self) -> np.ndarray:
        eu, ev, _ = self.graph.edge_arrays
        out = np.empty(self.dim, dtype=int)
        out[0::2] = eu
        out[1::2] = ev
        return out

    @cached_property
    def heads(self) -> np.ndarray:
        eu, ev, _ = self.graph.edge_arrays
        out = np.empty(self.dim, dtype=int)
        out[0::2] = ev
        out[1::2] = eu
        return out

    @cached_property
    def swap_perm(self) -> np.ndarray:
        perm = np.arange(self.dim)
        perm[0::2] += 1
        perm[1::2] -= 1
        return perm

    def index(self, x: int, y: int) -> int:
        i = self.graph.edge_index[(x, y) if x < y else (y, x)]
        return 2 * i if x < y else 2 * i + 1

    def star_state(self, x: int) -> np.ndarray:
        g = self.graph
        vec = np.zeros(self.dim)
        dx = g.degrees[x]
        for y, w in g.neighbors(x):
            vec[self.index(x, y)] = math.sqrt(w / dx)
        return vec

    def star_minus(self, x: int) -> np.ndarray:
        """(I - swap)/sqrt(2) applied to the star state of x."""
        phi = self.star_state(x)
        return (phi - phi[self.swap_perm]) / math.sqrt(2.0)

    def embed_flow(self, per_edge: np.ndarray, normalize: bool = True) -> np.ndarray:
        """Antisymmetric edge-space vector with slot amplitude h_xy/sqrt(w)."""
        _, _, ew = self.graph.edge_arrays
        vec = np.zeros(self.dim)
        vec[0::2] = per_edge / np.sqrt(ew)
        vec[1::2] = -per_edge / np.sqrt(ew)
        if normalize:
            nrm = np.linalg.norm(vec)
            if nrm == 0.0:
                raise ValueError("cannot normalize the zero flow")
            vec /= nrm
        return vec


def flow_state(space: EdgeSpace, flow: ElectricFlow) -> np.ndarray:
    """Normalized flow state with slot amplitude f_xy / sqrt(2 R_s w_xy)."""
    return space.embed_flow(flow.edge_flows, normalize=True)


# ---------------------------------------------------------------------------
# walk operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QWalkOperator:
    """Walk unitary with its (orthonormal) spectral decomposition.

    ``modes`` is unitary with eigenvector columns; ``phases`` holds the
    eigenphases in (-pi, pi].  The phase-zero eigenspace is selected by
    |theta| <= 1e-9.
    """

    space: EdgeSpace
    source: int
    sink: frozenset[int]
    matrix: np.ndarray
    phases: np.ndarray
    modes: np.ndarray

    @cached_property
    def zero_mask(self) -> np.ndarray:
        return np.abs(self.phases) <= _PHASE_ZERO_TOL

    def project_zero(self, vec: np.ndarray) -> np.ndarray:
        z = self.modes[:, self.zero_mask]
        return z @ (z.conj().T @ vec)

    def amplitudes(self, vec: np.ndarray) -> np.ndarray:
        """Eigenbasis coefficients of ``vec``."""
        return self.modes.conj().T @ vec


def build_operator(g: Graph, s: int, sink: Iterable[int],
                   cap: int = DEFAULT_DIMENSION_CAP) -> QWalkOperator:
    """Assemble and eigendecompose U = swap * C for one source/sink pair."""
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    if not g.is_connected():
        raise ValueError("the walk operator needs a connected graph")
    space = EdgeSpace(g)
    if space.dim > cap:
        raise DimensionOverflow(f"edge space dimension {space.dim} exceeds cap {cap}")

    c = -np.eye(space.dim)
    for x in range(g.n):
        if x == s or x in sink_set:
            continue
        phi = space.star_state(x)
        c += 2.0 * np.outer(phi, phi)
    u = c[space.swap_perm]

    gap = np.linalg.norm(u.T @ u - np.eye(space.dim))
    if gap > _UNITARITY_TOL:
        raise IdentityViolation(f"operator fails unitarity by {gap:.3e}")

    t, z = scipy.linalg.schur(u.astype(complex), output="complex")
    off = np.linalg.norm(t - np.diag(np.diag(t)))
    if off > 1e-8:
        raise IdentityViolation(f"spectral factorization left residual {off:.3e}")
    return QWalkOperator(space=space, source=s, sink=sink_set, matrix=u,
                         phases=np.angle(np.diag(t)), modes=z)


# ---------------------------------------------------------------------------
# closed flows and the invariant subspace
# ---------------------------------------------------------------------------

def _tree_parents(g: Graph, root: int) -> dict[int, int]:
    parents = {root: root}
    queue = [root]
    while queue:
        x = queue.pop()
        for y, _ in g.neighbors(x):
            if y not in parents:
                parents[y] = x
                queue.append(y)
    return parents


def _flow_to_root(g: Graph, parents: dict[int, int], x: int) -> np.ndarray:
    """Per-edge unit flow from x to the root of the parent map."""
    c = np.zeros(len(g.edges))
    while parents[x] != x:
        p = parents[x]
        i = g.edge_index[(x, p) if x < p else (p, x)]
        c[i] += 1.0 if x < p else -1.0
        x = p
    return c


def closed_flow_vectors(g: Graph, sink: Iterable[int]) -> list[np.ndarray]:
    """Basis of flows closed outside the sink, as normalized edge-space vectors.

    Fundamental cycles of one fixed spanning tree plus |M|-1 sink-to-sink
    unit flows; paths are taken as root-flow differences so the common
    part cancels exactly.
    """
    sink_sorted = sorted(set(int(x) for x in sink))
    space = EdgeSpace(g)
    parents = _tree_parents(g, root=0)
    tree_edges = set()
    for x, p in parents.items():
        if x != p:
            tree_edges.add(g.edge_index[(x, p) if x < p else (p, x)])

    out = []
    for i, (u, v, _) in enumerate(g.edges):
        if i in tree_edges:
            continue
        c = np.zeros(len(g.edges))
        c[i] = 1.0
        c += _flow_to_root(g, parents, v) - _flow_to_root(g, parents, u)
        out.append(space.embed_flow(c))
    m0 = sink_sorted[0]
    base = _flow_to_root(g, parents, m0)
    for m in sink_sorted[1:]:
        out.append(space.embed_flow(_flow_to_root(g, parents, m) - base))
    return out


@dataclass(frozen=True)
class QwInvariantReport:
    """Residuals of the fixed-space structure of the walk operator."""

    flow_fixed_residual: float
    closed_fixed_residual: float
    fixed_dim: int
    expected_fixed_dim: int
    overlap_residual: float
    nu_star_residual: float
    nu_minus_residual: float
    nu_norm_sq: float
    et_s: float


def invariant_subspace_check(op: QWalkOperator, flow: ElectricFlow,
                             tol: float = 1e-9) -> QwInvariantReport:
    """Verify the fixed space is exactly the flow state plus closed flows.

    Also checks the projection identity Pi_0 |phi_s^-> = (d_s R_s)^{-1/2} |f>
    and the decomposition of |phi_s^-> used by the effective-gap argument.
    """
    g = op.space.graph
    s = op.source
    fvec = flow_state(op.space, flow)

    flow_res = float(np.linalg.norm(op.matrix @ fvec - fvec))
    closed = closed_flow_vectors(g, op.sink)
    closed_res = 0.0
    for vec in closed:
        closed_res = max(closed_res, float(np.linalg.norm(op.matrix @ vec - vec)))
    if max(flow_res, closed_res) > tol:
        raise IdentityViolation(
            f"flows not fixed by the operator (residual {max(flow_res, closed_res):.3e})")

    fixed_dim = int(op.zero_mask.sum())
    cycles = len(g.edges) - g.n + 1
    expected = 1 + cycles + (len(op.sink) - 1)
    if fixed_dim != expected:
        raise IdentityViolation(
            f"fixed space has dimension {fixed_dim}, expected {expected}")

    psi = op.space.star_minus(s)
    rd = flow.resistance * g.degrees[s]
    overlap_res = float(np.linalg.norm(op.project_zero(psi) - fvec / math.sqrt(rd)))
    if overlap_res > tol:
        raise IdentityViolation(f"projection identity off by {overlap_res:.3e}")

    # |nu> = sqrt(2/R) sum_{x != s} v_x sqrt(d_x) |phi_x> lives in the
    # interior star span and satisfies Pi^- |nu> = |f> - sqrt(R d_s)|phi_s^->
    v = flow.voltages
    nu = np.zeros(op.space.dim)
    for x in range(g.n):
        if x == s or v[x] == 0.0:
            continue
        nu += v[x] * math.sqrt(g.degrees[x]) * op.space.star_state(x)
    nu *= math.sqrt(2.0 / flow.resistance)
    # nu must have no component on the source or sink stars
    outside = np.zeros_like(nu)
    for x in range(g.n):
        if x == s or x in op.sink:
            phi = op.space.star_state(x)
            outside += phi * (phi @ nu)
    nu_star_res = float(np.linalg.norm(outside))
    pi_minus_nu = (nu - nu[op.space.swap_perm]) / 2.0
    target = fvec - math.sqrt(rd) * psi
    nu_minus_res = float(np.linalg.norm(pi_minus_nu - target))
    et_s = escape_time(flow)
    if nu_star_res > tol or nu_minus_res > math.sqrt(tol):
        raise IdentityViolation("decomposition of the source star state failed")
    nu_norm_sq = float(nu @ nu)
    if nu_norm_sq > 2.0 * et_s * (1.0 + 1e-9):
        raise IdentityViolation(
            f"perpendicular mass {nu_norm_sq!r} exceeds 2 ET = {2 * et_s!r}")

    return QwInvariantReport(flow_fixed_residual=flow_res,
                             closed_fixed_residual=closed_res,
                             fixed_dim=fixed_dim, expected_fixed_dim=expected,
                             overlap_residual=overlap_res,
                             nu_star_residual=nu_star_res,
                             nu_minus_residual=nu_minus_res,
                             nu_norm_sq=nu_norm_sq, et_s=et_s)


# ---------------------------------------------------------------------------
# phase estimation model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseEstModel:
    """Exact outcome model of t-bit phase estimation.

    ``kernel`` maps an eigenphase to the probability that the register
    reads "0"; the recorded precision convention is delta = 2 pi / 2^t.
    """

    t_bits: int

    def __post_init__(self):
        if not (1 <= self.t_bits <= MAX_PHASE_BITS):
            raise PrecisionOverflow(
                f"phase register of {self.t_bits} bits outside [1, {MAX_PHASE_BITS}]")

    @property
    def delta(self) -> float:
        return 2.0 * math.pi / 2**self.t_bits

    @property
    def rounds(self) -> int:
        """Controlled-walk applications per estimation round."""
        return 2**self.t_bits

    def kernel(self, theta: np.ndarray) -> np.ndarray:
        n = 2**self.t_bits
        theta = np.asarray(theta, dtype=float)
        half = theta / 2.0
        small = np.abs(np.sin(half)) < 1e-15
        num = np.sin(n * half) ** 2
        den = (n**2) * np.sin(half) ** 2
        return np.where(small, 1.0, num / np.where(small, 1.0, den))


def bits_for_precision(delta: float) -> int:
    """Smallest register size whose convention precision is <= delta."""
    if delta <= 0.0:
        raise ValueError("precision must be positive")
    t = max(1, math.ceil(math.log2(2.0 * math.pi / delta)))
    if t > MAX_PHASE_BITS:
        raise PrecisionOverflow(
            f"precision {delta:.3e} needs {t} phase bits, cap is {MAX_PHASE_BITS}")
    return t


@dataclass(frozen=True)
class PrepareResult:
    success: bool
    p_success: float
    state: np.ndarray | None
    cost: int
    fidelity: float
    trace_distance: float
    trace_distance_bound: float


def prepare_flow_state(op: QWalkOperator, flow: ElectricFlow, t_bits: int,
                       rng: np.random.Generator) -> PrepareResult:
    """Simulate one phase-estimation round on |phi_s^-> analytically.

    The success probability obeys 1/(R_s d_s) <= p' <= (1 + delta^2 2 ET_s)
    / (R_s d_s) and the post-measurement state is within trace distance
    delta sqrt(2 ET_s) of the flow state; both are asserted against the
    electric oracle.  Cost is 2^t walk steps for the round.
    """
    model = PhaseEstModel(t_bits)
    g = op.space.graph
    psi = op.space.star_minus(op.source)
    coeff = op.amplitudes(psi)
    kern = model.kernel(op.phases)
    p_prime = float(np.sum(np.abs(coeff) ** 2 * kern))

    p_floor = 1.0 / (flow.resistance * g.degrees[op.source])
    et = escape_time(flow)
    p_ceil = p_floor * (1.0 + model.delta**2 * 2.0 * et)
    if not (p_floor - 1e-12 <= p_prime <= p_ceil + 1e-12):
        raise IdentityViolation(
            f"success probability {p_prime!r} outside [{p_floor!r}, {p_ceil!r}]")

    out = op.modes @ (coeff * np.sqrt(kern)) / math.sqrt(p_prime)
    fvec = flow_state(op.space, flow)
    fidelity = float(np.abs(fvec @ out.conj()) ** 2)
    tdist = math.sqrt(max(0.0, 1.0 - fidelity))
    bound = model.delta * math.sqrt(2.0 * et)
    if tdist > bound + 1e-12:
        raise IdentityViolation(
            f"output state {tdist!r} from the flow state, bound {bound!r}")

    success = bool(rng.random() < p_prime)
    return PrepareResult(success=success, p_success=p_prime,
                         state=out if success else None, cost=model.rounds,
                         fidelity=fidelity, trace_distance=tdist,
                         trace_distance_bound=bound)


# ---------------------------------------------------------------------------
# sampling through the degree-boosted graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _RoundData:
    """Outcome model of one estimation round at a fixed register size."""

    p_success: float
    mod_edge_probs: np.ndarray
    mod_edge_cum: np.ndarray
    keep_prob: float
    orig_edge_probs: np.ndarray


class _EtaContext:
    """Spectral data for one boost weight eta on the s-appended graph."""

    def __init__(self, g: Graph, s: int, sink: frozenset[int], eta: float, cap: int):
        self.eta = eta
        boosted, new_vertex = append_vertex(g, s, eta * g.degrees[s])
        self.graph = boosted
        self.source = new_vertex
        self.flow = solve_flow(FlowProblem(boosted, new_vertex, sink))
        self.op = build_operator(boosted, new_vertex, sink, cap)
        self.psi_coeff = self.op.amplitudes(self.op.space.star_minus(new_vertex))
        self.rd = float(self.flow.resistance * boosted.degrees[new_vertex])
        self.et = escape_time(self.flow)
        edge_map = np.full(len(boosted.edges), -1, dtype=int)
        for i, (u, v, _) in enumerate(boosted.edges):
            if new_vertex not in (u, v):
                edge_map[i] = g.edge_index[(u, v)]
        self.edge_map = edge_map
        self.new_edge_index = int(np.flatnonzero(edge_map < 0)[0])
        self._rounds: dict[int, _RoundData] = {}

    def round(self, t_bits: int) -> _RoundData:
        if t_bits not in self._rounds:
            model = PhaseEstModel(t_bits)
            kern = model.kernel(self.op.phases)
            weights = np.abs(self.psi_coeff) ** 2 * kern
            p_prime = float(weights.sum())
            out = self.op.modes @ (self.psi_coeff * np.sqrt(kern))
            slot_probs = np.abs(out) ** 2 / p_prime
            edge_probs = slot_probs[0::2] + slot_probs[1::2]
            keep = 1.0 - float(edge_probs[self.new_edge_index])
            orig = np.zeros(len(self.edge_map) - 1)
            for i, target in enumerate(self.edge_map):
                if target >= 0:
                    orig[target] = edge_probs[i] / keep
            self._rounds[t_bits] = _RoundData(
                p_success=p_prime, mod_edge_probs=edge_probs,
                mod_edge_cum=np.cumsum(edge_probs), keep_prob=keep,
                orig_edge_probs=orig)
        return self._rounds[t_bits]


class FlowStateSampler:
    """Cached modified-graph contexts for one (graph, source, sink) triple."""

    def __init__(self, g: Graph, s: int, sink: Iterable[int],
                 cap: int = DEFAULT_DIMENSION_CAP):
        self.graph = g
        self.source = s
        self.sink = frozenset(int(x) for x in sink)
        self.cap = cap
        self.base_flow = solve_flow(FlowProblem(g, s, self.sink))
        self.et_exact = escape_time(self.base_flow)
        self.rd_exact = float(self.base_flow.resistance * g.degrees[s])
        self._contexts: dict[float, _EtaContext] = {}

    def context(self, eta: float) -> _EtaContext:
        if eta not in self._contexts:
            self._contexts[eta] = _EtaContext(self.graph, self.source, self.sink,
                                              eta, self.cap)
        return self._contexts[eta]

    def output_distribution(self, eta: float, t_bits: int) -> np.ndarray:
        """Post-selected edge distribution over the original edges."""
        return self.context(eta).round(t_bits).orig_edge_probs.copy()


@dataclass(frozen=True)
class QwSampleOutcome:
    edge_index: int | None
    cost: int
    p_tilde: float
    halvings: int
    attempts: int


def _qw_edge_sample(sampler: FlowStateSampler, coarse_bits: int, fine_bits: int,
                    rng: np.random.Generator, p_tilde: float = 1.0,
                    stochastic_ae: bool = False, budget: int | None = None,
                    max_attempts: int = 100_000) -> QwSampleOutcome:
    """Run the halving loop until one post-selected edge sample lands.

    Each pass runs a coarse estimation round, an amplitude-estimation
    branch at precision 1/8 (exact by default, binomial noise optionally),
    and on a kept branch a fine round whose output state is measured in
    the edge basis.  A failed fine round or a post-selection miss repeats
    the pass.  A ``budget`` bound on the accumulated walk-step cost turns
    exhaustion into edge_index=None instead of an error.
    """
    cost = 0
    halvings = 0
    attempts = 0
    coarse_cost = 2**coarse_bits
    fine_cost = 2**fine_bits
    while True:
        attempts += 1
        if attempts > max_attempts:
            raise StepLimitExceeded("halving loop made no progress")
        if budget is not None and cost + coarse_cost * (1 + AE_ROUNDS) > budget:
            return QwSampleOutcome(edge_index=None, cost=cost, p_tilde=p_tilde,
                                   halvings=halvings, attempts=attempts)
        ctx = sampler.context(p_tilde)
        if ctx.et > 4.0 * sampler.et_exact * (1.0 + 1e-9):
            raise IdentityViolation(
                f"boosted escape time {ctx.et!r} exceeds 4 ET = {4 * sampler.et_exact!r}")
        coarse = ctx.round(coarse_bits)
        cost += coarse_cost * (1 + AE_ROUNDS)
        estimate = coarse.p_success
        if stochastic_ae:
            estimate = rng.binomial(64, coarse.p_success) / 64.0
        if estimate < 0.125:
            p_tilde *= 0.5
            halvings += 1
            continue
        if budget is not None and cost + fine_cost > budget:
            return QwSampleOutcome(edge_index=None, cost=cost, p_tilde=p_tilde,
                                   halvings=halvings, attempts=attempts)
        fine = ctx.round(fine_bits)
        cost += fine_cost
        if rng.random() >= fine.p_success:
            continue
        pick = int(np.searchsorted(fine.mod_edge_cum, rng.random(), side="right"))
        pick = min(pick, len(fine.mod_edge_cum) - 1)
        if pick == ctx.new_edge_index:
            continue
        return QwSampleOutcome(edge_index=int(ctx.edge_map[pick]), cost=cost,
                               p_tilde=p_tilde, halvings=halvings, attempts=attempts)


@dataclass(frozen=True)
class EtaPrepareResult:
    edge: tuple[int, int]
    cost: int
    halvings: int
    p_tilde: float
    attempts: int
    coarse_bits: int
    fine_bits: int


def eta_modified_prepare(g: Graph, s: int, sink: Iterable[int], et_upper: float,
                         epsilon: float, rng: np.random.Generator,
                         sampler: FlowStateSampler | None = None,
                         stochastic_ae: bool = False,
                         cap: int = DEFAULT_DIMENSION_CAP) -> EtaPrepareResult:
    """Draw one electric flow sample through the degree-boosted walk.

    Implements the halving loop: starting from a boost estimate of 1, run
    coarse estimation at precision 1/(2 sqrt(4 et_upper)), halve the
    estimate while the measured success probability stays below 1/8, then
    run the fine round at precision epsilon/(2 sqrt(4 et_upper)), measure
    the output state, and post-select away the boost edge.  The halving
    count is asserted against log2(R_s d_s) + 2 and the boosted escape
    time against 4 ET_s.
    """
    if not (0.0 < epsilon < 1.0):
        raise InvalidBound(f"epsilon must be in (0,1), got {epsilon}")
    if sampler is None:
        sampler = FlowStateSampler(g, s, sink, cap)
    if et_upper < sampler.et_exact * (1.0 - 1e-9):
        raise InvalidBound(
            f"escape-time bound {et_upper!r} below the exact value {sampler.et_exact!r}")
    et_prime = 4.0 * et_upper
    coarse_bits = bits_for_precision(1.0 / (2.0 * math.sqrt(et_prime)))
    fine_bits = bits_for_precision(epsilon / (2.0 * math.sqrt(et_prime)))

    outcome = _qw_edge_sample(sampler, coarse_bits, fine_bits, rng,
                              stochastic_ae=stochastic_ae)
    if not stochastic_ae and outcome.halvings > math.log2(sampler.rd_exact) + 2.0:
        raise IdentityViolation(
            f"{outcome.halvings} halvings exceed log2(R_s d_s) + 2")
    u, v, _ = g.edges[outcome.edge_index]
    return EtaPrepareResult(edge=(u, v), cost=outcome.cost,
                            halvings=outcome.halvings, p_tilde=outcome.p_tilde,
                            attempts=outcome.attempts, coarse_bits=coarse_bits,
                            fine_bits=fine_bits)


# ---------------------------------------------------------------------------
# the quantum process, search, and resistance estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantumElfsResult:
    """Arrival vertex and cost ledger of one simulated quantum run.

    ``absorbed`` is False when a truncation (step cap or cumulative cost
    cap) forced the fallback output, in which case ``vertex`` is the
    current non-sink source.
    """

    vertex: int
    absorbed: bool
    steps: int
    ledger: tuple[int, ...]
    total_cost: int
    fine_bits: int
    step_cap: int
    cost_cap: int


def quantum_elfs_process(g: Graph, s: int, sink: Iterable[int], ht_upper: float,
                         eht_upper: float, epsilon: float, rng: np.random.Generator,
                         samplers: dict[int, FlowStateSampler] | None = None,
                         cap: int = DEFAULT_DIMENSION_CAP) -> QuantumElfsResult:
    """Run the process with every step drawn from the walk-based sampler.

    Per-step budget T = sqrt(2 ht_upper eht_upper)/epsilon sets the fine
    estimation precision 1/T; the run truncates after eht_upper/epsilon
    steps or when the cumulative cost passes (T/epsilon) eht_upper
    log2(ht_upper/eht_upper) walk steps, whichever is first.
    """
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    if not (0.0 < epsilon < 1.0):
        raise InvalidBound(f"epsilon must be in (0,1), got {epsilon}")
    if ht_upper < 1.0 - 1e-9 or eht_upper < 1.0 - 1e-9:
        raise InvalidBound("time bounds below their floor of 1")
    ht_upper = max(ht_upper, 1.0)
    eht_upper = max(eht_upper, 1.0)

    budget = math.sqrt(2.0 * ht_upper * eht_upper) / epsilon
    fine_bits = bits_for_precision(1.0 / budget)
    step_cap = math.ceil(eht_upper / epsilon)
    log_factor = max(1.0, math.log2(max(ht_upper / eht_upper, 1.0)))
    cost_cap = math.ceil(COST_CAP_CONSTANT * budget / epsilon * eht_upper * log_factor)

    if samplers is None:
        samplers = {}
    p_tilde_start: dict[int, float] = {}

    x = s
    steps = 0
    total = 0
    ledger: list[int] = []
    absorbed = True
    while x not in sink_set:
        if steps >= step_cap or total >= cost_cap:
            absorbed = False
            break
        if x not in samplers:
            samplers[x] = FlowStateSampler(g, x, sink_set, cap)
        sampler = samplers[x]
        coarse_bits = bits_for_precision(1.0 / (2.0 * math.sqrt(4.0 * sampler.et_exact)))
        outcome = _qw_edge_sample(sampler, coarse_bits, fine_bits, rng,
                                  p_tilde=p_tilde_start.get(x, 1.0),
                                  budget=cost_cap - total)
        total += outcome.cost
        if outcome.edge_index is None:
            absorbed = False
            break
        p_tilde_start[x] = outcome.p_tilde
        ledger.append(outcome.cost)
        u, v, _ = g.edges[outcome.edge_index]
        x = u if rng.random() < 0.5 else v
        steps += 1
    return QuantumElfsResult(vertex=x, absorbed=absorbed, steps=steps,
                             ledger=tuple(ledger), total_cost=total,
                             fine_bits=fine_bits, step_cap=step_cap,
                             cost_cap=cost_cap)


@dataclass(frozen=True)
class SearchAttempt:
    budget_exponent: int
    ht_guess: float
    eht_guess: float
    cost: int
    vertex: int | None
    skipped: bool


@dataclass(frozen=True)
class SearchResult:
    """Outcome of the doubling search.

    ``total_cost`` counts simulated walk steps; ``nominal_cost`` sums the
    budget-unit cost function sqrt(2 ht) eht^{3/2} / eps^2 over the
    attempts actually run, the currency in which the doubling schedule is
    stated.
    """

    vertex: int
    total_cost: int
    nominal_cost: float
    attempts: tuple[SearchAttempt, ...]
    budget_exponent: int


def budget_doubling_search(g: Graph, s: int, sink: Iterable[int],
                           rng: np.random.Generator, epsilon: float = 0.1,
                           max_exponent: int = 30,
                           cap: int = DEFAULT_DIMENSION_CAP) -> SearchResult:
    """Find a sink vertex without prior time bounds.

    Outer loop doubles a cost budget b_i = 2^i; the inner loop tries
    hitting-time guesses b_i / 2^j with the companion guess chosen so the
    nominal cost sqrt(2 ht) eht^{3/2} / eps^2 lands at the budget.  Each
    attempt runs the quantum process and verifies its output against the
    sink membership oracle.  Guesses whose precision exceeds the register
    cap are skipped and recorded.
    """
    sink_set = frozenset(int(x) for x in sink)
    if s in sink_set:
        raise ValueError("source must not be a sink vertex")
    samplers: dict[int, FlowStateSampler] = {}
    attempts: list[SearchAttempt] = []
    total = 0
    nominal = 0.0
    for i in range(max_exponent + 1):
        b = float(2**i)
        for j in range(i + 1):
            ht_guess = b / 2**j
            if ht_guess < 1.0:
                break
            eht_guess = max(1.0, (b * epsilon**2 / math.sqrt(2.0 * ht_guess)) ** (2.0 / 3.0))
            try:
                res = quantum_elfs_process(g, s, sink_set, ht_guess, eht_guess,
                                           epsilon, rng, samplers=samplers, cap=cap)
            except PrecisionOverflow:
                attempts.append(SearchAttempt(budget_exponent=i, ht_guess=ht_guess,
                                              eht_guess=eht_guess, cost=0,
                                              vertex=None, skipped=True))
                continue
            total += res.total_cost
            nominal += math.sqrt(2.0 * ht_guess) * eht_guess**1.5 / epsilon**2
            attempts.append(SearchAttempt(budget_exponent=i, ht_guess=ht_guess,
                                          eht_guess=eht_guess, cost=res.total_cost,
                                          vertex=res.vertex, skipped=False))
            if res.vertex in sink_set:
                return SearchResult(vertex=res.vertex, total_cost=total,
                                    nominal_cost=nominal, attempts=tuple(attempts),
                                    budget_exponent=i)
    raise StepLimitExceeded(f"no sink vertex found within budget 2^{max_exponent}")


@dataclass(frozen=True)
class QwResistanceResult:
    """Certified success probability window for resistance estimation.

    ``p_prime`` is the exact probability of reading "0" at precision
    sqrt(epsilon / et_upper); it is certified to lie in
    [1, 1 + epsilon] / (R_s d_s).  ``cost_formula`` reports
    sqrt(et_upper) (epsilon^-3/2 + log2(R_s d_s)) walk steps, and
    ``estimation_calls`` the amplitude-estimation call count 1/(p' eps).
    """

    p_prime: float
    low: float
    high: float
    delta: float
    t_bits: int
    rd_exact: float
    cost_formula: float
    round_cost: int
    estimation_calls: int


def qw_resistance_probability(g: Graph, s: int, sink: Iterable[int],
                              et_upper: float, epsilon: float,
                              cap: int = DEFAULT_DIMENSION_CAP) -> QwResistanceResult:
    """Verify the probability identity behind walk-based resistance estimation."""
    sink_set = frozenset(int(x) for x in sink)
    if not (0.0 < epsilon < 1.0):
        raise InvalidBound(f"epsilon must be in (0,1), got {epsilon}")
    flow = solve_flow(FlowProblem(g, s, sink_set))
    et = escape_time(flow)
    if et_upper < et * (1.0 - 1e-12):
        raise InvalidBound(
            f"escape-time bound {et_upper!r} below the exact value {et!r}")
    rd = float(flow.resistance * g.degrees[s])
    delta = math.sqrt(epsilon / et_upper)
    t_bits = bits_for_precision(delta)

    op = build_operator(g, s, sink_set, cap)
    model = PhaseEstModel(t_bits)
    coeff = op.amplitudes(op.space.star_minus(s))
    p_prime = float(np.sum(np.abs(coeff) ** 2 * model.kernel(op.phases)))

    low, high = 1.0 / rd, (1.0 + epsilon) / rd
    if not (low - 1e-12 <= p_prime <= high + 1e-12):
        raise IdentityViolation(
            f"success probability {p_prime!r} outside [{low!r}, {high!r}]")
    cost_formula = math.sqrt(et_upper) * (epsilon**-1.5 + math.log2(max(rd, 1.0)))
    return QwResistanceResult(p_prime=p_prime, low=low, high=high, delta=delta,
                              t_bits=t_bits, rd_exact=rd, cost_formula=cost_formula,
                              round_cost=model.rounds,
                              estimation_calls=math.ceil(1.0 / (p_prime * epsilon)))

