"""Full-vocabulary ranking and top-k quality metrics.

Rankings order every vocabulary item by its mixture log-density (or a
baseline score), with ties broken by ascending item index so evaluation is
deterministic. Per-user metrics are averaged unweighted across users; users
with an empty target set are skipped and counted.

The ideal ranking used to normalize discounted cumulative gain places one
hit at each of the first |T| positions regardless of the cutoff, so a
perfect top-k list scores below 1 whenever k < |T|.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingMatrix
from .mdn import MixtureParameters, log_density_all


@dataclass
class RankedRecommendations:
    """Distinct item indices with non-increasing scores."""

    items: list[int]
    scores: list[float]

    def __post_init__(self):
        if len(self.items) != len(self.scores):
            raise ValueError("items and scores must have equal length")

    def top(self, k: int) -> list[int]:
        return self.items[:k]


def rank_items(params: MixtureParameters, emb: EmbeddingMatrix, k: int,
               exclude: set[int] | None = None) -> RankedRecommendations:
    """Top-k vocabulary items by log-density under one user's mixture.

    Excluded items are removed before truncation. Requesting more items than
    the (remaining) vocabulary clamps with a warning.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = log_density_all(emb.vectors, params)
    order = np.argsort(-scores, kind="stable")  # stable keeps ascending index on ties
    if exclude:
        order = order[~np.isin(order, list(exclude))]
    if k > order.size:
        warnings.warn(f"requested top-{k} but only {order.size} items are available; clamping")
        k = order.size
    chosen = order[:k]
    return RankedRecommendations([int(i) for i in chosen],
                                 [float(scores[i]) for i in chosen])


def precision_at_k(recommended: Sequence[int], targets: Iterable[int], k: int) -> float:
    """Fraction of the first k recommendations that are targets (divides by
    k even when fewer than k items were recommended)."""
    target_set = set(targets)
    hits = sum(1 for item in recommended[:k] if item in target_set)
    return hits / k


def recall_at_k(recommended: Sequence[int], targets: Iterable[int], k: int) -> float:
    """Fraction of the targets found in the first k recommendations."""
    target_set = set(targets)
    if not target_set:
        raise ValueError("target set must be non-empty")
    hits = sum(1 for item in recommended[:k] if item in target_set)
    return hits / len(target_set)


def ndcg_at_k(recommended: Sequence[int], targets: Iterable[int], k: int) -> float:
    """Position-discounted hit quality relative to the ideal ranking over
    the full target set."""
    target_set = set(targets)
    if not target_set:
        raise ValueError("target set must be non-empty")
    dcg = 0.0
    for position, item in enumerate(recommended[:k], start=1):
        if item in target_set:
            dcg += 1.0 / math.log2(position + 1)
    ideal = sum(1.0 / math.log2(position + 1)
                for position in range(1, len(target_set) + 1))
    return dcg / ideal


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; zero when both inputs are zero."""
    if precision == 0.0 and recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class MetricReport:
    """Unweighted per-user means of the ranking metrics at each cutoff."""

    cutoffs: list[int]
    precision: dict[int, float]
    recall: dict[int, float]
    ndcg: dict[int, float]
    f1: dict[int, float]
    n_users: int
    skipped_users: int = 0

    def rows(self, model_name: str) -> list[str]:
        return [
            f"{model_name},{k},{self.precision[k]:.6f},{self.recall[k]:.6f},"
            f"{self.ndcg[k]:.6f},{self.f1[k]:.6f}"
            for k in self.cutoffs
        ]

    def table(self, model_name: str) -> str:
        lines = [f"{'model':<18}{'k':>4}{'precision':>12}{'recall':>12}{'ndcg':>12}{'f1':>12}"]
        for k in self.cutoffs:
            lines.append(f"{model_name:<18}{k:>4}{self.precision[k]:>12.4f}"
                         f"{self.recall[k]:>12.4f}{self.ndcg[k]:>12.4f}{self.f1[k]:>12.4f}")
        return "\n".join(lines)


def evaluate_ranker(recommend: Callable[[Sequence[int], int, set[int] | None], RankedRecommendations],
                    sequences: Iterable, cutoffs: Sequence[int],
                    exclude_history: bool = False) -> MetricReport:
    """Score a ranking function over users.

    ``recommend(history, k, exclude)`` must return at least the top ``k``
    items it can produce. Users whose future is empty are skipped with a
    warning and counted in ``skipped_users``.
    """
    cutoffs = sorted(cutoffs)
    depth = max(cutoffs)
    sums = {k: np.zeros(4) for k in cutoffs}
    n_users = 0
    skipped = 0
    for seq in sequences:
        targets = set(seq.future)
        if not targets:
            skipped += 1
            warnings.warn(f"user {seq.user}: empty target set, skipping")
            continue
        exclude = set(seq.history) if exclude_history else None
        ranked = recommend(seq.history, depth, exclude)
        n_users += 1
        for k in cutoffs:
            p = precision_at_k(ranked.items, targets, k)
            r = recall_at_k(ranked.items, targets, k)
            nd = ndcg_at_k(ranked.items, targets, k)
            sums[k] += (p, r, nd, f1_score(p, r))
    if n_users == 0:
        raise ValueError("no users with non-empty targets to evaluate")
    return MetricReport(
        cutoffs=list(cutoffs),
        precision={k: sums[k][0] / n_users for k in cutoffs},
        recall={k: sums[k][1] / n_users for k in cutoffs},
        ndcg={k: sums[k][2] / n_users for k in cutoffs},
        f1={k: sums[k][3] / n_users for k in cutoffs},
        n_users=n_users,
        skipped_users=skipped)


def component_trend_rows(results: dict[tuple[str, int], MetricReport],
                         cutoff: int) -> list[str]:
    """Rows of "model,components,metric,value" for plotting metric against
    mixture size, one line per (model family, component count, metric)."""
    rows = []
    for (family, m), report in sorted(results.items()):
        rows.append(f"{family},{m},precision@{cutoff},{report.precision[cutoff]:.6f}")
        rows.append(f"{family},{m},recall@{cutoff},{report.recall[cutoff]:.6f}")
        rows.append(f"{family},{m},ndcg@{cutoff},{report.ndcg[cutoff]:.6f}")
    return rows
