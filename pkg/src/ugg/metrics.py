"""Ranking metrics for tracklet identification.

Ties are broken by position everywhere: among equal scores the lower index
ranks first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .core import UggError


class NoRelevantItemsAnywhere(UggError, ValueError):
    code = "NO_RELEVANT_ITEMS"


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, stable (lower index wins ties)."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def average_precision(scores: np.ndarray, relevant) -> float:
    """Precision at each relevant hit, averaged over the relevant items."""
    relevant = set(relevant)
    if not relevant:
        return float("nan")
    hits = 0
    total = 0.0
    for rank, idx in enumerate(rank_order(scores), start=1):
        if idx in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def mean_average_precision(scores, relevance: Sequence, return_per_query: bool = False):
    """mAP over galleries (rows of ``scores``); galleries with no relevant
    tracklet are left out of the mean."""
    scores = np.asarray(scores, dtype=np.float64)
    per_query = [average_precision(scores[l], relevance[l]) if relevance[l] else None
                 for l in range(scores.shape[0])]
    used = [ap for ap in per_query if ap is not None]
    if not used:
        raise NoRelevantItemsAnywhere("no gallery has a relevant tracklet")
    m = float(np.mean(used))
    return (m, per_query) if return_per_query else m


def recall_at_k(scores, relevance: Sequence, k: int) -> float:
    """Fraction of galleries (with at least one relevant tracklet) whose top-k
    ranked tracklets contain a relevant one."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    found = []
    for l in range(scores.shape[0]):
        rel = set(relevance[l])
        if not rel:
            continue
        top = rank_order(scores[l])[:k]
        found.append(any(int(i) in rel for i in top))
    return float(np.mean(found)) if found else 0.0


def topk_accuracy(scores, true_identity, k: int) -> float:
    """Fraction of tracklets whose true gallery is among the k best-scoring
    galleries of its column."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(true_identity)
    hits = [truth[i] in rank_order(scores[:, i])[:k] for i in range(scores.shape[1])]
    return float(np.mean(hits))


DEFAULT_RECALL_KS = (1, 3, 5)
DEFAULT_TOPK_KS = (1, 2, 5, 10)


@dataclass
class RankingReport:
    mean_average_precision: float
    recall_at_k: Dict[int, float]
    topk_accuracy: Dict[int, float]
    per_query_detail: Optional[list] = field(default=None)

    def to_dict(self) -> dict:
        return {
            "mean_average_precision": self.mean_average_precision,
            "recall_at_k": {str(k): v for k, v in sorted(self.recall_at_k.items())},
            "topk_accuracy": {str(k): v for k, v in sorted(self.topk_accuracy.items())},
            "per_query_detail": self.per_query_detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RankingReport:
        return cls(
            float(d["mean_average_precision"]),
            {int(k): float(v) for k, v in d["recall_at_k"].items()},
            {int(k): float(v) for k, v in d["topk_accuracy"].items()},
            d.get("per_query_detail"),
        )

    def __eq__(self, other):
        return isinstance(other, RankingReport) and self.to_dict() == other.to_dict()


def ranking_report(scores, true_identity, recall_ks=DEFAULT_RECALL_KS,
                   topk_ks=DEFAULT_TOPK_KS, detail: bool = False) -> RankingReport:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(true_identity)
    relevance = [set(np.flatnonzero(truth == l).tolist()) for l in range(scores.shape[0])]
    m, per_query = mean_average_precision(scores, relevance, return_per_query=True)
    return RankingReport(
        m,
        {k: recall_at_k(scores, relevance, k) for k in recall_ks},
        {k: topk_accuracy(scores, truth, k) for k in topk_ks},
        per_query if detail else None,
    )
