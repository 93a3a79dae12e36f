"""Exact energy of the gated random field and a brute-force joint table.

The joint table is the reference the mean-field updates are checked
against: tiny instances only, everything in the log domain.  Infinite
negative-gate penalties are never represented numerically; the support is
simply restricted to ``y^n == L`` (and, when cannot-links mask positive
gates, to ``y^p == 0`` on cannot-link edges).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import DimensionMismatch, Graph, ProblemInstance, UggConfig, UggError

MAX_JOINT_SIZE = 2 ** 20


class IndexOutOfRange(UggError, IndexError):
    code = "INDEX_OUT_OF_RANGE"


class InstanceTooLarge(UggError, ValueError):
    code = "INSTANCE_TOO_LARGE"


def _check_node(instance, i):
    if not 0 <= i < instance.num_tracklets:
        raise IndexOutOfRange(f"tracklet index {i} outside [0, {instance.num_tracklets})")


def sample_unary(instance: ProblemInstance, config: UggConfig, i: int, label: int) -> float:
    _check_node(instance, i)
    if not 0 <= label < instance.num_galleries:
        raise IndexOutOfRange(f"gallery index {label} outside [0, {instance.num_galleries})")
    return -config.temp_gallery * float(instance.gallery_tracklet_sim[label, i])


def gate_unaries(instance: ProblemInstance, config: UggConfig, edge, y_pos: int, y_neg: int):
    """Return ``(positive_part, negative_part)``; the latter is ``math.inf``
    when the negative gate disagrees with the cannot-link entry."""
    i, j = edge
    _check_node(instance, i)
    _check_node(instance, j)
    pos = -config.temp_tracklet * float(instance.tracklet_tracklet_sim[i, j]) if y_pos else 0.0
    neg = 0.0 if int(y_neg) == int(instance.cannot_link[i, j]) else math.inf
    return pos, neg


def triplet_terms(config: UggConfig, labels, gates):
    x_i, x_j = labels
    y_pos, y_neg = gates
    pos = config.alpha_positive if (y_pos and x_i != x_j) else 0.0
    neg = config.alpha_negative if (y_neg and x_i == x_j) else 0.0
    return pos, neg


@dataclass(frozen=True, eq=False)
class Assignment:
    labels: np.ndarray            # (N,) gallery index per node
    positive_gates: np.ndarray    # (E,) aligned with graph.directed_edges
    negative_gates: np.ndarray    # (E,)


def total_energy(instance: ProblemInstance, config: UggConfig, graph: Graph,
                 assignment: Assignment) -> float:
    x = np.asarray(assignment.labels)
    yp = np.asarray(assignment.positive_gates)
    yn = np.asarray(assignment.negative_gates)
    n_edges = len(graph.directed_edges)
    if x.shape != (graph.num_nodes,) or yp.shape != (n_edges,) or yn.shape != (n_edges,):
        raise DimensionMismatch("assignment does not match the graph")
    e = 0.0
    for i in range(graph.num_nodes):
        e += sample_unary(instance, config, i, int(x[i]))
    for k, (i, j) in enumerate(graph.directed_edges):
        pos, neg = gate_unaries(instance, config, (i, j), yp[k], yn[k])
        if neg == math.inf:
            return math.inf
        tp, tn = triplet_terms(config, (x[i], x[j]), (yp[k], yn[k]))
        e += pos + tp + tn
    return e


@dataclass(frozen=True, eq=False)
class JointTable:
    """Every label assignment crossed with every admissible positive-gate
    configuration; ``log_weights[a, b]`` is ``-E`` for label configuration
    ``label_configs[a]`` and gate configuration ``gate_configs[b]``."""

    graph: Graph
    label_configs: np.ndarray     # (M_x, N)
    gate_configs: np.ndarray      # (M_y, E) positive gates
    negative_gates: np.ndarray    # (E,) fixed to the cannot-link entries
    forced_closed: np.ndarray     # (E,) positive gates pinned to 0
    log_weights: np.ndarray       # (M_x, M_y)
    normalizer: float

    @property
    def log_probs(self) -> np.ndarray:
        return self.log_weights - self.normalizer

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def __len__(self):
        return self.log_weights.size

    def assignments(self):
        for x in self.label_configs:
            for y in self.gate_configs:
                yield Assignment(x.copy(), y.copy(), self.negative_gates.copy())

    def node_marginals(self) -> np.ndarray:
        """Exact C x N marginals of the labels."""
        p_x = np.exp(logsumexp(self.log_probs, axis=1))
        c = int(self.label_configs.max()) + 1 if self.label_configs.size else 0
        out = np.zeros((c, self.graph.num_nodes))
        for i in range(self.graph.num_nodes):
            np.add.at(out[:, i], self.label_configs[:, i], p_x)
        return out


def enumerate_joint(instance: ProblemInstance, config: UggConfig, graph: Graph) -> JointTable:
    c, n = instance.num_galleries, instance.num_tracklets
    edges = graph.directed_edges
    n_edges = len(edges)
    if c ** n * 2 ** n_edges > MAX_JOINT_SIZE:
        raise InstanceTooLarge(f"C^N * 2^E = {c}^{n} * 2^{n_edges} exceeds {MAX_JOINT_SIZE}")

    src = np.array([e[0] for e in edges], dtype=int)
    dst = np.array([e[1] for e in edges], dtype=int)
    cl = np.array([instance.cannot_link[i, j] for i, j in edges], dtype=np.int8)
    forced = (cl == 1) if config.cannot_link_masks_positive else np.zeros(n_edges, dtype=bool)

    xs = np.array(list(itertools.product(range(c), repeat=n)), dtype=int).reshape(-1, n)
    free = np.flatnonzero(~forced)
    combos = list(itertools.product((0, 1), repeat=free.size))
    free_cfg = np.array(combos, dtype=np.int8).reshape(len(combos), free.size)
    ys = np.zeros((free_cfg.shape[0], n_edges), dtype=np.int8)
    ys[:, free] = free_cfg

    s_gt = instance.gallery_tracklet_sim
    unary_x = -config.temp_gallery * s_gt[xs, np.arange(n)].sum(axis=1)
    s_edge = np.array([instance.tracklet_tracklet_sim[i, j] for i, j in edges])
    unary_y = -config.temp_tracklet * (ys @ s_edge) if n_edges else np.zeros(ys.shape[0])
    if n_edges:
        differ = (xs[:, src] != xs[:, dst]).astype(np.float64)
        pos_trip = config.alpha_positive * (differ @ ys.T.astype(np.float64))
        neg_trip = config.alpha_negative * ((1.0 - differ) @ cl.astype(np.float64))
    else:
        pos_trip = np.zeros((xs.shape[0], ys.shape[0]))
        neg_trip = np.zeros(xs.shape[0])
    energy = unary_x[:, None] + unary_y[None, :] + pos_trip + neg_trip[:, None]
    log_w = -energy
    return JointTable(graph, xs, ys, cl, forced, log_w, float(logsumexp(log_w)))


def _xlogy_sum(q, log_q, log_p):
    mask = q > 0
    return float(np.sum(q[mask] * (log_q[mask] - log_p[mask])))


def kl_to_exact(beliefs, table: JointTable, gate_family: str = "bernoulli") -> float:
    """``D(Q || P)`` between a factorized belief state and the exact table.

    ``gate_family="bernoulli"`` treats every positive gate as an independent
    binary variable with ``P(open) = pi``.  ``"categorical"`` treats the gates
    leaving each node as one categorical choice of the single open gate,
    which is the family the per-node gate normalization describes.
    """
    graph = table.graph
    q = np.asarray(beliefs.node_beliefs, dtype=np.float64)
    n = graph.num_nodes
    c = q.shape[0]
    if q.shape[1] != n or table.label_configs.shape[1] != n or \
            (table.label_configs.size and table.label_configs.max() >= c):
        raise DimensionMismatch("beliefs do not match the joint table")
    edges = graph.directed_edges
    pi = np.array([beliefs.positive_gate_probs[i, j] for i, j in edges], dtype=np.float64)
    pi_n = np.array([beliefs.negative_gate_probs[i, j] for i, j in edges], dtype=np.float64)
    if not np.array_equal(pi_n, table.negative_gates.astype(np.float64)):
        return math.inf
    if np.any(pi[table.forced_closed] > 0):
        return math.inf

    with np.errstate(divide="ignore"):
        log_qx = np.log(q)[table.label_configs, np.arange(n)].sum(axis=1)
        ys = table.gate_configs.astype(bool)
        if gate_family == "bernoulli":
            log_open, log_closed = np.log(pi), np.log1p(-pi)
            log_qy = np.where(ys, log_open, log_closed).sum(axis=1) if edges else \
                np.zeros(ys.shape[0])
        elif gate_family == "categorical":
            log_qy = np.zeros(ys.shape[0])
            src = np.array([e[0] for e in edges], dtype=int)
            log_pi = np.log(pi)
            for i in range(n):
                out = np.flatnonzero((src == i) & ~table.forced_closed)
                if out.size == 0:
                    continue
                row = ys[:, out]
                one_hot = row.sum(axis=1) == 1
                chosen = np.where(row, log_pi[out], 0.0).sum(axis=1)
                log_qy += np.where(one_hot, chosen, -np.inf)
        else:
            raise ValueError(f"unknown gate family {gate_family!r}")

    log_q = log_qx[:, None] + log_qy[None, :]
    qj = np.exp(log_q)
    if abs(qj.sum() - 1.0) > 1e-9:
        # Q puts mass where P has none
        return math.inf
    return _xlogy_sum(qj, log_q, table.log_probs)
