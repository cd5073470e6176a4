"""Electric-flow sampling on weighted graphs.

Exact electric flows, the edge-sampling Markov process they induce, its
random-walk couplings and estimators, Schur-complement tree analysis, and
a dense simulator of the absorbing quantum walk that prepares the flow
state.  See the README for the experiment CLI.
"""

from .electric import (
    ElectricFlow,
    FlowSampleDist,
    draw_edge,
    effective_resistance,
    sample_dist,
    solve_flow,
)
from .graph import (
    FlowProblem,
    Graph,
    Laplacian,
    append_vertex,
    build_graph,
    graph_from_json,
    graph_to_json,
    laplacian,
    merge_sink,
    split_edges,
)
from .process import (
    ElfsChain,
    ElfsTrace,
    WalkFunctionals,
    check_step_identities,
    elfs_arrival_distribution,
    elfs_transition_matrix,
    exact_functionals,
    simulate_elfs,
)

__all__ = [
    "ElectricFlow",
    "ElfsChain",
    "ElfsTrace",
    "FlowProblem",
    "FlowSampleDist",
    "Graph",
    "Laplacian",
    "WalkFunctionals",
    "append_vertex",
    "build_graph",
    "check_step_identities",
    "draw_edge",
    "effective_resistance",
    "elfs_arrival_distribution",
    "elfs_transition_matrix",
    "exact_functionals",
    "graph_from_json",
    "graph_to_json",
    "laplacian",
    "merge_sink",
    "sample_dist",
    "simulate_elfs",
    "solve_flow",
    "split_edges",
]
