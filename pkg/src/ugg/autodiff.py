"""Training loss and reverse-mode gradients through unrolled inference.

The forward pass here is the one :func:`ugg.inference.run_inference` runs,
built from the same kernels in the same order, so its output is
bit-identical.  Gradients are exposed at the similarity-matrix boundary
(``dL/dS_gt``, ``dL/dS_tt``) plus both temperatures; graph topology is
treated as a constant.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (GateMode, Graph, InvalidConfig, Labels, ProblemInstance, UggConfig, UggError,
                   UpdateSemantics, build_graph, validate_instance)
from .inference import col_softmax, gate_logits, gate_support, masked_row_softmax, node_logits

PROB_FLOOR = 1e-300


class LabelOutOfRange(UggError, ValueError):
    code = "LABEL_OUT_OF_RANGE"


class UnsupervisedNoLoss(UserWarning):
    """No labeled tracklets: the loss is identically zero (nothing to train)."""


@dataclass(frozen=True)
class LossConfig:
    pair_weight: float = 0.1
    pair_link: str = "logistic"
    # Accepted for configuration compatibility; not part of the loss.
    feature_weight: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.pair_weight) and self.pair_weight >= 0):
            raise InvalidConfig(f"pair_weight must be finite and >= 0, got {self.pair_weight!r}")
        if self.pair_link not in ("logistic", "affine_clamp"):
            raise InvalidConfig(f"unknown pair_link {self.pair_link!r}")

    def to_dict(self) -> dict:
        return {"pair_weight": self.pair_weight, "pair_link": self.pair_link,
                "feature_weight": self.feature_weight}

    @classmethod
    def from_dict(cls, d: dict) -> LossConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class GradientBundle:
    d_temp_gallery: float
    d_temp_tracklet: float
    d_gallery_sim: np.ndarray
    d_tracklet_sim: np.ndarray


_AFFINE_EPS = 1e-12


def _pair_terms(s_tt, z, link):
    """Elementwise BCE(link(s), z) and its derivative in s."""
    if link == "logistic":
        # softplus(s) - z s, the stable form of BCE(sigmoid(s), z)
        val = np.logaddexp(0.0, s_tt) - z * s_tt
        grad = 1.0 / (1.0 + np.exp(-s_tt)) - z
        return val, grad
    raw = (s_tt + 1.0) / 2.0
    p = np.clip(raw, _AFFINE_EPS, 1.0 - _AFFINE_EPS)
    val = -(z * np.log(p) + (1.0 - z) * np.log1p(-p))
    inside = (raw > _AFFINE_EPS) & (raw < 1.0 - _AFFINE_EPS)
    grad = np.where(inside, 0.5 * (p - z) / (p * (1.0 - p)), 0.0)
    return val, grad


def _loss_parts(q, s_tt, labels: Labels, loss_config: LossConfig):
    """Loss value, dL/dq and the direct dL/dS_tt of the pair term."""
    c, n = q.shape
    labeled = labels.labeled_set
    if len(labels.class_label) != n:
        raise LabelOutOfRange(f"labels cover {len(labels.class_label)} tracklets, expected {n}")
    for i in labeled:
        if not 0 <= labels.class_label[i] < c:
            raise LabelOutOfRange(f"label {labels.class_label[i]} of tracklet {i} outside [0, {c})")
    g_q = np.zeros_like(q)
    g_tt = np.zeros_like(s_tt)
    if not labeled:
        warnings.warn("empty labeled set, loss is zero", UnsupervisedNoLoss, stacklevel=3)
        return 0.0, g_q, g_tt

    idx = np.array(labeled)
    z = np.array([labels.class_label[i] for i in labeled])
    q_true = np.maximum(q[z, idx], PROB_FLOOR)
    ce = float(-np.log(q_true).sum() / n)
    g_q[z, idx] = np.where(q[z, idx] > PROB_FLOOR, -1.0 / (n * q_true), 0.0)

    pair = 0.0
    if loss_config.pair_weight > 0 and idx.size > 1:
        zb = labels.pair_matrix()
        sub = np.ix_(idx, idx)
        off_diag = ~np.eye(idx.size, dtype=bool)
        val, grad = _pair_terms(s_tt[sub], zb[sub], loss_config.pair_link)
        scale = loss_config.pair_weight / n ** 2
        pair = float(scale * val[off_diag].sum())
        g_tt[sub] = scale * np.where(off_diag, grad, 0.0)
    return ce + pair, g_q, g_tt


def loss(refined_sim, instance: ProblemInstance, labels: Labels,
         loss_config: LossConfig = LossConfig()) -> float:
    """Cross-entropy on the refined scores of labeled tracklets (scaled by 1/N)
    plus ``pair_weight / N^2`` times the pairwise BCE over ordered labeled
    pairs ``i != j``."""
    value, _, _ = _loss_parts(np.asarray(refined_sim, dtype=np.float64),
                              instance.tracklet_tracklet_sim, labels, loss_config)
    return value


def _forward(s_gt, s_tt, cannot_link, adjacency, config: UggConfig):
    support = gate_support(adjacency, cannot_link, config)
    n_gates = np.where(adjacency, cannot_link, 0).astype(np.float64)
    qs = [col_softmax(config.temp_gallery * s_gt)]
    ps = [masked_row_softmax(gate_logits(s_tt, None, config), support)]
    for _ in range(config.iterations):
        if config.gate_mode is GateMode.FIXED:
            p = ps[-1]
        else:
            p = masked_row_softmax(gate_logits(s_tt, qs[-1], config), support)
        q = col_softmax(node_logits(s_gt, qs[-1], ps[-1], n_gates, config))
        qs.append(q)
        ps.append(p)
    return qs, ps, n_gates


def _col_softmax_vjp(q, g):
    return q * (g - (q * g).sum(axis=0, keepdims=True))


def _row_softmax_vjp(p, g):
    return p * (g - (p * g).sum(axis=1, keepdims=True))


def _backward_arrays(s_gt, s_tt, cannot_link, adjacency, config, loss_config, labels):
    qs, ps, n_gates = _forward(s_gt, s_tt, cannot_link, adjacency, config)
    value, g_q, g_tt_direct = _loss_parts(qs[-1], s_tt, labels, loss_config)

    t_gt, t_tt = config.temp_gallery, config.temp_tracklet
    a_p, a_n = config.alpha_positive, config.alpha_negative
    exact = config.update_semantics is UpdateSemantics.DERIVATION_EXACT
    adaptive = config.gate_mode is GateMode.ADAPTIVE

    g_gt = np.zeros_like(s_gt)
    g_tt = g_tt_direct.copy()
    g_tgt = 0.0
    g_ttt = 0.0
    g_ps = [np.zeros_like(p) for p in ps]

    for t in range(config.iterations, 0, -1):
        q_prev, p_prev = qs[t - 1], ps[t - 1]
        g_a = _col_softmax_vjp(qs[t], g_q)
        g_gt += t_gt * g_a
        g_tgt += float((s_gt * g_a).sum())
        w_pos = p_prev.T + p_prev if exact else p_prev.T
        w_neg = n_gates.T + n_gates if exact else n_gates.T
        g_q_prev = a_p * (g_a @ w_pos.T) - a_n * (g_a @ w_neg.T)
        g_w = a_p * (q_prev.T @ g_a)
        g_ps[t - 1] += g_w.T + g_w if exact else g_w.T
        if adaptive:
            g_b = _row_softmax_vjp(ps[t], g_ps[t])
            g_tt += t_tt * g_b
            g_ttt += float((s_tt * g_b).sum())
            g_q_prev += a_p * (q_prev @ (g_b + g_b.T))
        else:
            g_ps[t - 1] += g_ps[t]
        g_q = g_q_prev

    g_a0 = _col_softmax_vjp(qs[0], g_q)
    g_gt += t_gt * g_a0
    g_tgt += float((s_gt * g_a0).sum())
    g_b0 = _row_softmax_vjp(ps[0], g_ps[0])
    g_tt += t_tt * g_b0
    g_ttt += float((s_tt * g_b0).sum())
    return value, GradientBundle(g_tgt, g_ttt, g_gt, g_tt), qs[-1]


def backward(instance: ProblemInstance, config: UggConfig, loss_config: LossConfig,
             labels: Labels, graph: Graph = None):
    """Return ``(loss, GradientBundle)`` with exact gradients of the loss."""
    instance = validate_instance(instance)
    if graph is None:
        graph = build_graph(instance, config)
    value, grads, _ = _backward_arrays(
        instance.gallery_tracklet_sim, instance.tracklet_tracklet_sim, instance.cannot_link,
        graph.adjacency, config, loss_config, labels)
    return value, grads


def forward_refined(instance: ProblemInstance, config: UggConfig, graph: Graph = None) -> np.ndarray:
    """Refined scores from the forward pass used by :func:`backward`."""
    instance = validate_instance(instance)
    if graph is None:
        graph = build_graph(instance, config)
    qs, _, _ = _forward(instance.gallery_tracklet_sim, instance.tracklet_tracklet_sim,
                        instance.cannot_link, graph.adjacency, config)
    return qs[-1]


def _loss_at(s_gt, s_tt, cannot_link, adjacency, config, loss_config, labels):
    qs, _, _ = _forward(s_gt, s_tt, cannot_link, adjacency, config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnsupervisedNoLoss)
        return _loss_parts(qs[-1], s_tt, labels, loss_config)[0]


def relative_error(a, f) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)


def finite_difference_check(instance: ProblemInstance, config: UggConfig,
                            loss_config: LossConfig, labels: Labels, step: float = 1e-5,
                            min_magnitude: float = 1e-8, graph: Graph = None) -> dict:
    """Compare analytic gradients with central differences.

    Returns, per block (``temp_gallery``, ``temp_tracklet``, ``gallery_sim``,
    ``tracklet_sim``), the maximum relative error over coordinates whose
    analytic gradient exceeds ``min_magnitude`` in absolute value, and the
    number of such coordinates.  Matrix entries are perturbed one at a time,
    so ``s_ij`` and ``s_ji`` are independent coordinates.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    instance = validate_instance(instance)
    if graph is None:
        graph = build_graph(instance, config)
    adj = graph.adjacency
    s_gt = np.array(instance.gallery_tracklet_sim)
    s_tt = np.array(instance.tracklet_tracklet_sim)
    cl = instance.cannot_link
    _, grads, _ = _backward_arrays(s_gt, s_tt, cl, adj, config, loss_config, labels)

    def f(sg, st, cfg):
        return _loss_at(sg, st, cl, adj, cfg, loss_config, labels)

    def scalar_fd(name):
        v = getattr(config, name)
        hi = f(s_gt, s_tt, config.replace(**{name: v + step}))
        lo = f(s_gt, s_tt, config.replace(**{name: v - step}))
        return (hi - lo) / (2 * step)

    def matrix_fd(which):
        base = s_gt if which == "gt" else s_tt
        out = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += step
            minus[idx] -= step
            if which == "gt":
                out[idx] = (f(plus, s_tt, config) - f(minus, s_tt, config)) / (2 * step)
            else:
                out[idx] = (f(s_gt, plus, config) - f(s_gt, minus, config)) / (2 * step)
        return out

    blocks = {
        "temp_gallery": (np.array([grads.d_temp_gallery]), np.array([scalar_fd("temp_gallery")])),
        "temp_tracklet": (np.array([grads.d_temp_tracklet]), np.array([scalar_fd("temp_tracklet")])),
        "gallery_sim": (grads.d_gallery_sim, matrix_fd("gt")),
        "tracklet_sim": (grads.d_tracklet_sim, matrix_fd("tt")),
    }
    report = {}
    for name, (analytic, numeric) in blocks.items():
        keep = np.abs(analytic) > min_magnitude
        err = relative_error(analytic[keep], numeric[keep])
        report[name] = {"max_rel_error": float(err.max()) if err.size else 0.0,
                        "n_checked": int(keep.sum())}
    report["max_rel_error"] = max(v["max_rel_error"] for v in report.values())
    return report
