"""Experiment front end: named, seeded, machine-readable runs.

Each registered experiment maps to one library operation, embeds its own
oracle assertions, and writes a JSON document with the tested claim, the
parameters, metrics, and a pass flag.  Exit code 0 means every embedded
assertion passed; 1 an assertion failed; 2 a usage error; 3 a runtime
error.  The timestamp lives in a single field so byte comparisons can
exclude it.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from . import coupling, electric, estimators, process, qwsim, tree
from .ensemble import run_replicas
from .errors import BadSpec, ElfsError, IdentityViolation, OracleMismatch
from .generators import complete, cycle, path, random_tree, star
from .graph import FlowProblem, Graph, graph_from_json


@dataclass
class ExperimentSpec:
    """Parsed invocation: what to run, on which graph, with which knobs."""

    experiment: str
    graph: Graph
    source: int
    sink: frozenset[int]
    epsilon: float
    replicas: int
    seed: int
    threads: int
    out: str | None
    fmt: str
    keep: tuple[int, ...] = ()
    side_a: tuple[int, ...] = ()
    edge: tuple[int, int] | None = None
    variant: str = "hitting"
    max_n: int = 12


def _parse_gen(spec: str) -> Graph:
    name, _, args = spec.partition(":")
    parts = [p for p in args.split(",") if p] if args else []
    try:
        if name == "path":
            return path(int(parts[0]))
        if name == "cycle":
            return cycle(int(parts[0]))
        if name == "complete":
            return complete(int(parts[0]))
        if name == "star":
            return star(int(parts[0]))
        if name == "random_tree":
            n = int(parts[0])
            wmin = float(parts[1]) if len(parts) > 1 else 1.0
            wmax = float(parts[2]) if len(parts) > 2 else wmin
            seed = int(parts[3]) if len(parts) > 3 else 0
            return random_tree(n, np.random.default_rng(seed), wmin, wmax)
    except (ValueError, IndexError) as exc:
        raise BadSpec(f"bad generator arguments in {spec!r}: {exc}") from exc
    raise BadSpec(f"unknown generator {name!r}")


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (frozenset, set)):
        return sorted(obj)
    return obj


def _zscore(sample_mean: float, target: float, sample_std: float, n: int) -> float:
    se = sample_std / math.sqrt(n)
    if se == 0.0:
        return 0.0 if sample_mean == target else math.inf
    return (sample_mean - target) / se


def _chisquare(counts: np.ndarray, probs: np.ndarray) -> float:
    """Chi-square p-value against expected frequencies, zero cells dropped."""
    n = counts.sum()
    live = probs > 0.0
    if counts[~live].sum() > 0:
        return 0.0
    expected = probs[live] * n
    stat = float(((counts[live] - expected) ** 2 / expected).sum())
    dof = int(live.sum()) - 1
    if dof == 0:
        return 1.0
    return float(scipy.stats.chi2.sf(stat, dof))


# ---------------------------------------------------------------------------
# replica workers (module level so process pools can pickle them)
# ---------------------------------------------------------------------------

def _w_coupled(rng, count, g=None, s=None, sink=None):
    stop, nu = coupling.coupled_step_ensemble(g, s, sink, count, rng)
    return stop, nu


def _w_edge_coupled(rng, count, g=None, s=None, sink=None):
    edge, picks = coupling.edge_coupled_ensemble(g, s, sink, count, rng)
    return edge, picks


def _w_rw(rng, count, g=None, s=None, sink=None):
    ens = coupling.rw_ensemble(g, s, sink, count, rng)
    return ens.steps, ens.esc, ens.visits_source, ens.arrival


def _w_elfs(rng, count, g=None, s=None, sink=None):
    rho, arrival = process.elfs_ensemble(g, s, sink, count, rng)
    return rho, arrival


def _w_cond_return(rng, count, g=None, s=None, sink=None):
    returned, times = coupling.conditional_return_ensemble(g, s, sink, count, rng)
    return returned, times


def _replicated(worker, spec: ExperimentSpec, **kwargs):
    fn = functools.partial(worker, g=spec.graph, s=spec.source, sink=spec.sink,
                           **kwargs)
    return run_replicas(fn, spec.replicas, spec.seed, spec.threads)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _exp_graph_info(spec):
    g = spec.graph
    degree_sum = float(g.degrees.sum())
    weight_sum = 2.0 * g.total_weight()
    ok = abs(degree_sum - weight_sum) <= 1e-9 * max(1.0, weight_sum)
    return {
        "n": g.n, "edges": len(g.edges), "connected": g.is_connected(),
        "degree_sum": degree_sum, "twice_total_weight": weight_sum,
    }, ok, None


def _exp_electric_solve(spec):
    flow = electric.solve_flow(FlowProblem(spec.graph, spec.source, spec.sink))
    dist = electric.sample_dist(flow)
    energy_gap = abs(flow.energy - flow.resistance)
    ok = energy_gap <= 1e-9 * max(1.0, flow.resistance)
    return {
        "resistance": flow.resistance, "energy": flow.energy,
        "energy_residual": energy_gap, "voltages": flow.voltages,
        "edge_probabilities": dist.probs, "prob_sum": float(dist.probs.sum()),
    }, ok, None


def _exp_elfs_eht(spec):
    fn = process.exact_functionals(spec.graph, spec.source, spec.sink)
    rho, _ = _replicated(_w_elfs, spec)
    z = _zscore(float(rho.mean()), fn.eht_s, float(rho.std(ddof=1)), len(rho))
    chain_ok = 1.0 - 1e-9 <= fn.rd_s <= fn.et_s + 1e-9 <= fn.ht_s + 2e-9 \
        and fn.eht_s <= 2.0 * fn.ht_s + 1e-9
    metrics = {
        "ht": fn.ht_s, "et": fn.et_s, "eht": fn.eht_s, "rd": fn.rd_s,
        "mc_eht": float(rho.mean()), "mc_z": z, "replicas": len(rho),
    }
    if tree.is_tree(spec.graph):
        tb = tree.tree_eht_bound(spec.graph, spec.source, spec.sink)
        metrics.update(tree_bound=tb.bound, tree_margin=tb.margin)
        chain_ok = chain_ok and tb.margin >= -1e-9
    return metrics, chain_ok and abs(z) <= 3.0, [("rho", rho)]


def _exp_arrival_compare(spec):
    chain = process.elfs_transition_matrix(spec.graph, spec.sink)
    arrival = process.elfs_arrival_distribution(spec.graph, spec.source, spec.sink,
                                                chain=chain)
    p = coupling.walk_matrix(spec.graph)
    interior = list(chain.interior)
    sinks = list(chain.sink_sorted)
    import scipy.linalg as sla
    rw = sla.solve(np.eye(len(interior)) - p[np.ix_(interior, interior)],
                   p[np.ix_(interior, sinks)])[interior.index(spec.source)]
    gap = float(np.max(np.abs(arrival - rw)))
    _, arr = _replicated(_w_elfs, spec)
    counts = np.bincount(arr, minlength=spec.graph.n)[sinks].astype(float)
    freq = counts / counts.sum()
    sigma = np.sqrt(arrival * (1 - arrival) / counts.sum())
    mc_ok = bool(np.all(np.abs(freq - arrival) <= 3.0 * sigma + 1e-12))
    return {
        "arrival": arrival, "walk_formula_gap": gap, "mc_frequencies": freq,
        "replicas": int(counts.sum()),
    }, gap <= 1e-8 and mc_ok, None


def _exp_identities(spec):
    rep = process.check_step_identities(spec.graph, spec.source, spec.sink)
    eht, mid, upper, two_ht = process.jensen_sqrt_chain(spec.graph, spec.source,
                                                        spec.sink)
    tol = 1e-8
    jensen_ok = eht <= mid + tol and mid <= upper + tol and upper <= two_ht + tol
    return {
        "ht_drop_residual": rep.ht_drop_residual,
        "potential_residual": rep.potential_residual,
        "et_sum_residual": rep.et_sum_residual,
        "jensen_chain": [eht, mid, upper, two_ht],
    }, rep.max_residual <= tol and jensen_ok, None


def _exp_coupling_vertex(spec):
    chain = process.elfs_transition_matrix(spec.graph, spec.sink)
    fn = process.exact_functionals(spec.graph, spec.source, spec.sink, chain=chain)
    stop, nu = _replicated(_w_coupled, spec)
    counts = np.bincount(stop, minlength=spec.graph.n).astype(float)
    pval = _chisquare(counts, chain.q[spec.source])
    z = _zscore(float(nu.mean()), fn.et_s / 2.0, float(nu.std(ddof=1)), len(nu))
    return {
        "chi2_pvalue": pval, "mean_nu": float(nu.mean()),
        "target_nu": fn.et_s / 2.0, "nu_z": z, "replicas": len(nu),
    }, pval > 0.001 and abs(z) <= 3.0, [("stop_vertex", stop), ("nu", nu)]


def _exp_coupling_edge(spec):
    flow = electric.solve_flow(FlowProblem(spec.graph, spec.source, spec.sink))
    dist = electric.sample_dist(flow)
    edge, _ = _replicated(_w_edge_coupled, spec)
    counts = np.bincount(edge, minlength=len(spec.graph.edges)).astype(float)
    pval = _chisquare(counts, dist.probs)
    return {
        "chi2_pvalue": pval, "replicas": int(counts.sum()),
        "target_probs": dist.probs,
    }, pval > 0.001, [("stop_edge", edge)]


def _exp_escape_time(spec):
    fn = process.exact_functionals(spec.graph, spec.source, spec.sink)
    steps, esc, visits, _ = _replicated(_w_rw, spec)
    z_esc = _zscore(float(esc.mean()), fn.et_s, float(esc.std(ddof=1)), len(esc))
    z_ht = _zscore(float(steps.mean()), fn.ht_s, float(steps.std(ddof=1)), len(steps))
    z_rd = _zscore(float(visits.mean()), fn.rd_s, float(visits.std(ddof=1)),
                   len(visits))
    return {
        "mean_esc": float(esc.mean()), "target_esc": fn.et_s, "esc_z": z_esc,
        "mean_tau": float(steps.mean()), "target_tau": fn.ht_s, "tau_z": z_ht,
        "mean_visits": float(visits.mean()), "target_visits": fn.rd_s,
        "visits_z": z_rd, "replicas": len(esc),
    }, max(abs(z_esc), abs(z_ht), abs(z_rd)) <= 3.0, [("esc", esc), ("tau", steps)]


def _exp_doob(spec):
    rep = coupling.doob_check(spec.graph, spec.source, spec.sink)
    metrics = {
        "applicable": rep.applicable, "et": rep.et_s, "rd": rep.rd_s,
        "degree_residual": rep.degree_residual,
        "total_weight_residual": rep.total_weight_residual,
    }
    ok = True
    if rep.applicable:
        returned, times = _replicated(_w_cond_return, spec)
        sample = times[returned].astype(float)
        z = _zscore(float(sample.mean()), rep.conditional_return_formula,
                    float(sample.std(ddof=1)), len(sample)) if len(sample) > 1 else 0.0
        metrics.update(conditional_return=rep.conditional_return_formula,
                       kac_value=rep.conditional_return_kac,
                       mc_conditional_return=float(sample.mean()),
                       mc_z=z, returned=int(returned.sum()))
        ok = abs(z) <= 3.0
    return metrics, ok, None


def _exp_estimate_rd(spec):
    fn = process.exact_functionals(spec.graph, spec.source, spec.sink)
    cfg = estimators.EstimatorConfig(epsilon=spec.epsilon,
                                     replicas=spec.replicas or None)
    rng = np.random.default_rng(spec.seed)
    if spec.variant == "hitting":
        res = estimators.estimate_rd_hitting(spec.graph, spec.source, spec.sink,
                                             cfg, rng)
    else:
        res = estimators.estimate_rd_escape(spec.graph, spec.source, spec.sink,
                                            cfg, fn.et_s, rng)
    rel = abs(res.value - fn.rd_s) / fn.rd_s
    metrics = {
        "variant": spec.variant, "estimate": res.value, "exact": fn.rd_s,
        "relative_error": rel, "replicas": res.replicas,
        "total_steps": res.total_steps, "step_budget": res.step_budget,
    }
    budget_ok = res.step_budget is None or res.total_steps <= res.step_budget
    return metrics, rel <= 2.0 * spec.epsilon and budget_ok, \
        [("visits", res.counts)]


def _exp_schur_check(spec):
    keep = spec.keep or tuple(sorted({spec.source, *spec.sink}))
    probes = [(spec.source, min(spec.sink))]
    rep = tree.check_schur_invariance(spec.graph, keep, probes)
    return {
        "keep": list(keep), "voltage_residual": rep.voltage_residual,
        "walk_residual": rep.walk_residual,
    }, max(rep.voltage_residual, rep.walk_residual) <= 1e-8, None


def _exp_pba(spec):
    if not spec.side_a:
        raise BadSpec("pba needs --side-a")
    res = tree.pba_quantities(spec.graph, spec.source, spec.sink, spec.side_a)
    rng = np.random.default_rng(spec.seed)
    a_edges = set()
    allowed = set(spec.side_a) | {spec.source}
    for i, (u, v, _) in enumerate(spec.graph.edges):
        if u in allowed and v in allowed:
            a_edges.add(i)
    hits = both = 0
    sampler = process.ElfsSampler(spec.graph, spec.sink)
    for _ in range(spec.replicas):
        trace = process.simulate_elfs(spec.graph, spec.source, spec.sink, rng,
                                      sampler=sampler)
        idx = [spec.graph.edge_index[e] for e in trace.edges]
        first_b = next((t for t, e in enumerate(idx) if e not in a_edges), None)
        if first_b is None:
            continue
        both += 1
        if any(e in a_edges for e in idx[first_b + 1:]):
            hits += 1
    metrics = {"f_a": res.f_a, "p_ba": res.p_ba,
               "first_sample_residual": res.first_sample_residual,
               "mc_trials": both}
    ok = res.first_sample_residual <= 1e-8
    if both > 20:
        freq = hits / both
        se = math.sqrt(res.p_ba * (1 - res.p_ba) / both)
        metrics.update(mc_return_freq=freq, mc_z=(freq - res.p_ba) / se if se else 0.0)
        ok = ok and abs(metrics["mc_z"]) <= 3.0
    return metrics, ok, None


def _exp_tree_recurrence(spec):
    if spec.edge is None:
        raise BadSpec("tree-recurrence needs --edge A,B")
    res = tree.recurrence_quantities(spec.graph, spec.edge, spec.sink)
    a, b = spec.edge
    counts_a = tree.edge_visit_counts(spec.graph, a, spec.sink)
    counts_b = tree.edge_visit_counts(spec.graph, b, spec.sink)
    i = spec.graph.edge_index[(a, b) if a < b else (b, a)]
    gap_e2 = max(abs(counts_a[i] - res.e_a_e2), abs(counts_b[i] - res.e_b_e2))
    return {
        "p": res.pair.p, "q": res.pair.q,
        "r": [res.pair.r1, res.pair.r2, res.pair.r3],
        "e_a_e2": res.e_a_e2, "e_b_e2": res.e_b_e2,
        "edge_chain_gap": gap_e2, "log_bound": res.log_bound,
        "sample_probs": res.sample_probs,
    }, gap_e2 <= 1e-8 and res.e_b_e2 <= res.log_bound + 1e-9, None


def _exp_tree_bound(spec):
    res = tree.tree_eht_bound(spec.graph, spec.source, spec.sink)
    return {
        "bound": res.bound, "exact_eht": res.exact, "margin": res.margin,
        "resistance": res.resistance, "entropy": res.entropy,
        "weighted_form": res.weighted_form, "unweighted_form": res.unweighted_form,
    }, res.margin >= -1e-9, None


def _exp_complete_graph_scan(spec):
    worst = 0.0
    rows = []
    for n in range(3, spec.max_n + 1):
        g = complete(n)
        for m in range(1, n - 1):
            sink = set(range(n - m, n))
            fn = process.exact_functionals(g, 0, sink)
            p = 0.5 * (1.0 / (m + 1) + m / n)
            gap = abs(fn.eht_s - 1.0 / p)
            worst = max(worst, gap)
            rows.append((n, m, fn.eht_s, 1.0 / p, gap))
    return {
        "cases": len(rows), "max_gap": worst, "max_n": spec.max_n,
    }, worst <= 1e-8, [("n", np.array([r[0] for r in rows])),
                       ("sink_size", np.array([r[1] for r in rows])),
                       ("eht", np.array([r[2] for r in rows])),
                       ("formula", np.array([r[3] for r in rows]))]


def _exp_qw_invariants(spec):
    op = qwsim.build_operator(spec.graph, spec.source, spec.sink)
    flow = electric.solve_flow(FlowProblem(spec.graph, spec.source, spec.sink))
    rep = qwsim.invariant_subspace_check(op, flow)
    unitarity = float(np.linalg.norm(op.matrix.T @ op.matrix
                                     - np.eye(op.space.dim)))
    return {
        "dimension": op.space.dim, "unitarity_gap": unitarity,
        "fixed_dim": rep.fixed_dim, "expected_fixed_dim": rep.expected_fixed_dim,
        "flow_fixed_residual": rep.flow_fixed_residual,
        "overlap_residual": rep.overlap_residual,
    }, unitarity <= 1e-10 and rep.fixed_dim == rep.expected_fixed_dim, None


def _exp_qw_flowstate(spec):
    flow = electric.solve_flow(FlowProblem(spec.graph, spec.source, spec.sink))
    et = process.escape_time(flow)
    delta = spec.epsilon / math.sqrt(2.0 * et)
    t_bits = qwsim.bits_for_precision(delta)
    op = qwsim.build_operator(spec.graph, spec.source, spec.sink)
    res = qwsim.prepare_flow_state(op, flow, t_bits,
                                   np.random.default_rng(spec.seed))
    return {
        "p_success": res.p_success, "fidelity": res.fidelity,
        "trace_distance": res.trace_distance,
        "trace_distance_bound": res.trace_distance_bound,
        "t_bits": t_bits, "cost": res.cost,
    }, res.trace_distance <= res.trace_distance_bound + 1e-12, None


def _exp_qw_eta(spec):
    rng = np.random.default_rng(spec.seed)
    sampler = qwsim.FlowStateSampler(spec.graph, spec.source, spec.sink)
    res = qwsim.eta_modified_prepare(spec.graph, spec.source, spec.sink,
                                     sampler.et_exact, spec.epsilon, rng,
                                     sampler=sampler)
    exact = electric.sample_dist(sampler.base_flow).probs
    out = sampler.output_distribution(res.p_tilde, res.fine_bits)
    tv = 0.5 * float(np.abs(out - exact).sum())
    return {
        "edge": list(res.edge), "halvings": res.halvings, "cost": res.cost,
        "p_tilde": res.p_tilde, "output_tv": tv,
        "halving_cap": math.log2(sampler.rd_exact) + 2.0,
    }, tv <= spec.epsilon, None


def _exp_qw_elfs(spec):
    fn = process.exact_functionals(spec.graph, spec.source, spec.sink)
    arrival = process.elfs_arrival_distribution(spec.graph, spec.source, spec.sink)
    sinks = sorted(spec.sink)
    rng = np.random.default_rng(spec.seed)
    samplers: dict[int, qwsim.FlowStateSampler] = {}
    counts = np.zeros(len(sinks))
    truncated = 0
    costs = []
    for _ in range(spec.replicas):
        res = qwsim.quantum_elfs_process(spec.graph, spec.source, spec.sink,
                                         fn.ht_s, fn.eht_s, spec.epsilon, rng,
                                         samplers=samplers)
        costs.append(res.total_cost)
        if res.absorbed:
            counts[sinks.index(res.vertex)] += 1
        else:
            truncated += 1
    freq = counts / max(counts.sum(), 1.0)
    tv = 0.5 * float(np.abs(freq - arrival).sum())
    noise = 1.5 * math.sqrt(len(sinks) / max(counts.sum(), 1.0))
    budget = 4.0 * spec.epsilon + noise
    return {
        "tv": tv, "tv_budget": budget, "truncated": truncated,
        "mean_cost": float(np.mean(costs)), "replicas": spec.replicas,
        "cost_cap_constant": qwsim.COST_CAP_CONSTANT,
    }, tv <= budget, [("cost", np.array(costs))]


def _exp_qw_search(spec):
    rng = np.random.default_rng(spec.seed)
    res = qwsim.budget_doubling_search(spec.graph, spec.source, spec.sink, rng)
    return {
        "vertex": res.vertex, "walk_cost": res.total_cost,
        "nominal_cost": res.nominal_cost, "budget_exponent": res.budget_exponent,
        "attempts": len(res.attempts),
        "skipped": sum(a.skipped for a in res.attempts),
    }, res.vertex in spec.sink, None


def _exp_qw_resistance(spec):
    flow = electric.solve_flow(FlowProblem(spec.graph, spec.source, spec.sink))
    et = process.escape_time(flow)
    res = qwsim.qw_resistance_probability(spec.graph, spec.source, spec.sink,
                                          et, spec.epsilon)
    return {
        "p_prime": res.p_prime, "low": res.low, "high": res.high,
        "delta": res.delta, "t_bits": res.t_bits,
        "cost_formula": res.cost_formula, "round_cost": res.round_cost,
        "estimation_calls": res.estimation_calls,
    }, res.low - 1e-12 <= res.p_prime <= res.high + 1e-12, None


EXPERIMENTS = {
    "graph-info": (_exp_graph_info,
                   "vertex degrees sum to twice the total edge weight"),
    "electric-solve": (_exp_electric_solve,
                       "the unit flow's energy equals the effective resistance "
                       "and the squared-flow edge probabilities sum to one"),
    "elfs-eht": (_exp_elfs_eht,
                 "simulated sample counts match the absorbing-chain expectation "
                 "and respect 1 <= R d <= ET <= HT with EHT <= 2 HT"),
    "arrival-compare": (_exp_arrival_compare,
                        "the sampling process, the random walk, and the net "
                        "sink flow share one arrival distribution"),
    "identities": (_exp_identities,
                   "one sample lowers the expected hitting time by ET/2, the "
                   "run's total escape time averages 2 HT, the expected "
                   "potential update is v(1 - v/(2R)), and the square-root "
                   "cost chain is ordered"),
    "coupling-vertex": (_exp_coupling_vertex,
                        "the stopped walk's vertex law equals the process's "
                        "one-step law and the stop index averages ET/2"),
    "coupling-edge": (_exp_coupling_edge,
                      "the edge-stopped lazy walk reproduces the squared-flow "
                      "edge distribution"),
    "escape-time": (_exp_escape_time,
                    "the walk leaves its source for the last time at ET on "
                    "average, visits it R d times, and is absorbed at HT"),
    "doob": (_exp_doob,
             "conditioned on returning before absorption, the return time "
             "averages (ET - 1)/(R d - 1) via the voltage-reweighted chain"),
    "estimate-rd": (_exp_estimate_rd,
                    "source visit counts estimate R d within the requested "
                    "relative error and step budget"),
    "schur-check": (_exp_schur_check,
                    "eliminating vertices by the Schur complement preserves "
                    "kept voltages and the watched walk"),
    "pba": (_exp_pba,
            "at a cut-vertex source the first sample lands in a side with "
            "probability equal to its sink flow, and returns there with "
            "probability f/(1+f)"),
    "tree-recurrence": (_exp_tree_recurrence,
                        "per-edge expected sample counts across an interior "
                        "tree edge follow the two-flow closed forms"),
    "tree-bound": (_exp_tree_bound,
                   "the expected number of samples on a tree is at most "
                   "2 + sum_m f_m log2(R w_m / f_m^2)"),
    "complete-graph-scan": (_exp_complete_graph_scan,
                            "on complete graphs the expected sample count "
                            "equals 2 / (1/(|M|+1) + |M|/n) exactly"),
    "qw-invariants": (_exp_qw_invariants,
                      "the walk unitary fixes exactly the flow state plus "
                      "closed flows and projects the source star onto the "
                      "flow state with weight 1/(d R)"),
    "qw-flowstate": (_exp_qw_flowstate,
                     "phase estimation returns '0' with probability in "
                     "[1, 1 + 2 delta^2 ET]/(R d) and leaves a state within "
                     "delta sqrt(2 ET) of the flow state"),
    "qw-eta": (_exp_qw_eta,
               "the degree-boosted sampler halves its estimate at most "
               "log2(R d) + 2 times and post-selects the exact edge law"),
    "qw-elfs": (_exp_qw_elfs,
                "the walk-sampled process arrives within total variation "
                "4 eps of the random-walk arrival distribution"),
    "qw-search": (_exp_qw_search,
                  "doubling budgets finds a sink vertex without prior bounds"),
    "qw-resistance": (_exp_qw_resistance,
                      "the '0'-outcome probability at precision "
                      "sqrt(eps/ET) certifies R d within a factor 1 + eps"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elfs", description="electric-flow sampling experiments")
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS),
                        help="registered experiment name")
    src = parser.add_mutually_exclusive_group()
    src.add_argument("--gen", help="named generator, e.g. path:64 or "
                                   "random_tree:24,0.1,10,7")
    src.add_argument("--graph", help="JSON graph file")
    parser.add_argument("--source", type=int, default=0)
    parser.add_argument("--sink", default=None,
                        help="comma-separated sink ids (default: last vertex)")
    parser.add_argument("--eps", type=float, default=0.1)
    parser.add_argument("--replicas", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for replica ensembles")
    parser.add_argument("--out", default=None, help="output path (default stdout)")
    parser.add_argument("--format", dest="fmt", choices=["json", "csv"],
                        default="json",
                        help="csv additionally writes per-replica data")
    parser.add_argument("--keep", default=None,
                        help="comma-separated kept vertices (schur-check)")
    parser.add_argument("--side-a", dest="side_a", default=None,
                        help="comma-separated side-A vertices (pba)")
    parser.add_argument("--edge", default=None,
                        help="interior tree edge A,B (tree-recurrence)")
    parser.add_argument("--variant", choices=["hitting", "escape"],
                        default="hitting", help="estimator variant (estimate-rd)")
    parser.add_argument("--max-n", dest="max_n", type=int, default=12,
                        help="largest complete graph in the scan")
    return parser


def _ids(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x != "")
    except ValueError as exc:
        raise BadSpec(f"bad id list {text!r}") from exc


def make_spec(args: argparse.Namespace) -> ExperimentSpec:
    if args.gen:
        g = _parse_gen(args.gen)
    elif args.graph:
        with open(args.graph, "r", encoding="utf-8") as fh:
            g = graph_from_json(fh.read())
    else:
        raise BadSpec("one of --gen or --graph is required")
    sink = frozenset(_ids(args.sink)) if args.sink else frozenset([g.n - 1])
    if args.replicas < 1:
        raise BadSpec("--replicas must be positive")
    return ExperimentSpec(
        experiment=args.experiment, graph=g, source=args.source, sink=sink,
        epsilon=args.eps, replicas=args.replicas, seed=args.seed,
        threads=args.threads, out=args.out, fmt=args.fmt,
        keep=_ids(args.keep) if args.keep else (),
        side_a=_ids(args.side_a) if args.side_a else (),
        edge=tuple(_ids(args.edge)) if args.edge else None,
        variant=args.variant, max_n=args.max_n)


def run(spec: ExperimentSpec) -> tuple[dict, bool]:
    """Execute one experiment and write its result document."""
    runner, claim = EXPERIMENTS[spec.experiment]
    try:
        metrics, passed, rows = runner(spec)
    except (IdentityViolation, OracleMismatch) as exc:
        metrics, passed, rows = {"violation": str(exc)}, False, None
    doc = {
        "experiment": spec.experiment,
        "claim": claim,
        "parameters": {
            "n": spec.graph.n, "edges": len(spec.graph.edges),
            "source": spec.source, "sink": sorted(spec.sink),
            "eps": spec.epsilon, "replicas": spec.replicas,
            "threads": spec.threads,
        },
        "seed": spec.seed,
        "metrics": _jsonify(metrics),
        "passed": bool(passed),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if spec.out:
        with open(spec.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if spec.fmt == "csv" and rows:
        target = (spec.out + ".csv") if spec.out else None
        _write_csv(rows, target)
    return doc, passed


def _write_csv(rows, target):
    names = [name for name, _ in rows]
    cols = [np.asarray(col) for _, col in rows]
    out = open(target, "w", newline="", encoding="utf-8") if target else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["replica", *names])
        for i in range(len(cols[0])):
            writer.writerow([i, *(col[i] for col in cols)])
    finally:
        if target:
            out.close()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = make_spec(args)
        _, passed = run(spec)
    except BadSpec as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except ElfsError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
