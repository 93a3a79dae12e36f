"""Mean-field message passing over sample nodes and positive gates.

Every round reads only the previous round's snapshot (Jacobi schedule):
gates are recomputed from ``q^(t-1)``, then nodes from ``q^(t-1)`` and
``pi^(t-1)``.  Gate probabilities are kept as dense N x N matrices whose
entry ``[i, j]`` is the probability of the gate on edge ``i -> j`` and is
zero for non-edges.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import (GateMode, Graph, ProblemInstance, UggConfig, UpdateSemantics,
                   build_graph, validate_instance)


def col_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def masked_row_softmax(logits: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Softmax of each row over ``support``; rows with empty support are zero."""
    masked = np.where(support, logits, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(support, np.exp(masked - row_max), 0.0)
    tot = e.sum(axis=1, keepdims=True)
    return e / np.where(tot > 0, tot, 1.0)


def gate_support(adjacency: np.ndarray, cannot_link: np.ndarray, config: UggConfig) -> np.ndarray:
    if config.cannot_link_masks_positive:
        return adjacency & (cannot_link == 0)
    return adjacency.copy()


def node_logits(s_gt, q_prev, p_prev, n_gates, config: UggConfig) -> np.ndarray:
    """``T_gt s_{:,i} + a_p sum_j w_ij q_j - a_n sum_j v_ij q_j`` for every i.

    ``q @ p.T`` sums over outgoing gates ``i -> j``; derivation_exact adds the
    incoming ``j -> i`` gates, which the energy also couples to node i.
    """
    if config.update_semantics is UpdateSemantics.DERIVATION_EXACT:
        w_pos = p_prev.T + p_prev
        w_neg = n_gates.T + n_gates
    else:
        w_pos = p_prev.T
        w_neg = n_gates.T
    return (config.temp_gallery * s_gt
            + config.alpha_positive * (q_prev @ w_pos)
            - config.alpha_negative * (q_prev @ w_neg))


def gate_logits(s_tt, q_prev, config: UggConfig) -> np.ndarray:
    logits = config.temp_tracklet * s_tt
    if q_prev is not None:
        logits = logits + config.alpha_positive * (q_prev.T @ q_prev)
    return logits


@dataclass(frozen=True, eq=False)
class BeliefState:
    node_beliefs: np.ndarray          # C x N, column i is q_i
    positive_gate_probs: np.ndarray   # N x N, [i, j] = pi^p_{i->j}
    negative_gate_probs: np.ndarray   # N x N, [i, j] = pi^n_{i->j}
    iteration: int

    def edge_values(self, graph: Graph, which: str = "positive") -> np.ndarray:
        m = self.positive_gate_probs if which == "positive" else self.negative_gate_probs
        return np.array([m[i, j] for i, j in graph.directed_edges], dtype=np.float64)


def init_state(instance: ProblemInstance, config: UggConfig, graph: Graph) -> BeliefState:
    adj = graph.adjacency
    support = gate_support(adj, instance.cannot_link, config)
    q0 = col_softmax(config.temp_gallery * instance.gallery_tracklet_sim)
    p0 = masked_row_softmax(gate_logits(instance.tracklet_tracklet_sim, None, config), support)
    n_gates = np.where(adj, instance.cannot_link, 0).astype(np.float64)
    return BeliefState(q0, p0, n_gates, 0)


def update_sample_nodes(state: BeliefState, instance: ProblemInstance, config: UggConfig,
                        graph: Graph) -> np.ndarray:
    a = node_logits(instance.gallery_tracklet_sim, state.node_beliefs,
                    state.positive_gate_probs, state.negative_gate_probs, config)
    return col_softmax(a)


def update_positive_gates(state: BeliefState, instance: ProblemInstance, config: UggConfig,
                          graph: Graph) -> np.ndarray:
    if config.gate_mode is GateMode.FIXED:
        return state.positive_gate_probs
    support = gate_support(graph.adjacency, instance.cannot_link, config)
    b = gate_logits(instance.tracklet_tracklet_sim, state.node_beliefs, config)
    return masked_row_softmax(b, support)


def step(state: BeliefState, instance: ProblemInstance, config: UggConfig,
         graph: Graph) -> BeliefState:
    gates = update_positive_gates(state, instance, config, graph)
    nodes = update_sample_nodes(state, instance, config, graph)
    return BeliefState(nodes, gates, state.negative_gate_probs, state.iteration + 1)


def run_inference(instance: ProblemInstance, config: UggConfig, graph: Optional[Graph] = None,
                  keep_trace: bool = False):
    """Refine the gallery-to-tracklet scores with ``config.iterations`` rounds.

    Returns ``(refined, final_state, trace)`` where ``refined`` is the C x N
    matrix whose column i is ``q_i^(K)`` and ``trace`` lists the states of
    rounds 0..K (``None`` unless ``keep_trace``).
    """
    instance = validate_instance(instance)
    if graph is None:
        graph = build_graph(instance, config)
    state = init_state(instance, config, graph)
    trace: Optional[List[BeliefState]] = [state] if keep_trace else None
    for _ in range(config.iterations):
        state = step(state, instance, config, graph)
        if trace is not None:
            trace.append(state)
    return state.node_beliefs.copy(), state, trace


def check_state(state: BeliefState, instance: ProblemInstance, config: UggConfig,
                graph: Graph, tol: float = 1e-9) -> List[str]:
    """Return a list of violated structural invariants (empty when healthy)."""
    problems = []
    q = state.node_beliefs
    if np.any(np.abs(q.sum(axis=0) - 1.0) > tol):
        problems.append("node beliefs off the simplex")
    # with a single gallery q_i == 1 is the only point of the simplex
    upper_bad = q.shape[0] > 1 and np.any(q >= 1)
    if np.any(q <= 0) or upper_bad:
        problems.append("node belief entry outside (0, 1)")
    support = gate_support(graph.adjacency, instance.cannot_link, config)
    p = state.positive_gate_probs
    if np.any(p[~support] != 0):
        problems.append("positive gate mass outside the gate support")
    rows = support.any(axis=1)
    if np.any(np.abs(p[rows].sum(axis=1) - 1.0) > tol):
        problems.append("positive gate row not normalized")
    expected_n = np.where(graph.adjacency, instance.cannot_link, 0)
    if not np.array_equal(state.negative_gate_probs, expected_n):
        problems.append("negative gates differ from the cannot-link matrix")
    return problems
