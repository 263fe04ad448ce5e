"""Count-based reference recommenders.

Two baselines: recently-viewed-items (history items ranked by recency) and
item-to-item collaborative filtering, which averages the conditional
co-view probability of a candidate over every history position.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .evaluation import RankedRecommendations


class CooccurrenceTable:
    """Counts of (future item, history item) pairs across training sequences.

    ``seed_total(j)`` is the sum of pair counts over all future items for
    history item ``j``, which makes each per-seed conditional distribution
    sum to one.
    """

    def __init__(self):
        self.pair_counts: dict[int, Counter] = {}
        self._seed_totals: Counter = Counter()

    def add(self, future_item: int, history_item: int, count: int = 1) -> None:
        self.pair_counts.setdefault(history_item, Counter())[future_item] += count
        self._seed_totals[history_item] += count

    def count(self, future_item: int, history_item: int) -> int:
        return self.pair_counts.get(history_item, Counter()).get(future_item, 0)

    def seed_total(self, history_item: int) -> int:
        return self._seed_totals.get(history_item, 0)

    def conditional(self, future_item: int, history_item: int) -> float:
        total = self.seed_total(history_item)
        if total == 0:
            return 0.0
        return self.count(future_item, history_item) / total

    def to_triples(self) -> list[tuple[int, int, int]]:
        triples = [(future, seed, count)
                   for seed, futures in self.pair_counts.items()
                   for future, count in futures.items()]
        triples.sort()
        return triples

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for future, seed, count in self.to_triples():
                fh.write(f"{future}\t{seed}\t{count}\n")

    @classmethod
    def load(cls, path) -> "CooccurrenceTable":
        table = cls()
        with open(Path(path), "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.split()
                if len(parts) != 3:
                    raise ValueError(f"{path}: line {line_no}: expected 3 fields")
                future, seed, count = (int(p) for p in parts)
                table.add(future, seed, count)
        return table


def build_table(sequences: Iterable) -> CooccurrenceTable:
    """Count every (future item, history item) pair; duplicates count per
    occurrence on both sides. An empty corpus yields an empty table."""
    table = CooccurrenceTable()
    for seq in sequences:
        for future_item in seq.future:
            for history_item in seq.history:
                table.add(future_item, history_item)
    return table


def item_cf_scores(history: Sequence[int], table: CooccurrenceTable,
                   vocab_size: int) -> np.ndarray:
    """Average conditional probability of each vocabulary item over the
    history positions. Each position contributes one term, so duplicate
    seeds weigh in per occurrence; unseen seeds contribute zero."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    scores = np.zeros(vocab_size)
    for seed in history:
        total = table.seed_total(seed)
        if total == 0:
            continue
        for future_item, count in table.pair_counts[seed].items():
            scores[future_item] += count / total
    scores /= len(history)
    return scores


def item_cf_rank(history: Sequence[int], table: CooccurrenceTable, vocab_size: int,
                 k: int, exclude: set[int] | None = None) -> RankedRecommendations:
    """Top-k items by averaged conditional probability, ties by ascending index."""
    scores = item_cf_scores(history, table, vocab_size)
    order = np.argsort(-scores, kind="stable")
    items, kept_scores = [], []
    for idx in order:
        if exclude and int(idx) in exclude:
            continue
        items.append(int(idx))
        kept_scores.append(float(scores[idx]))
        if len(items) == k:
            break
    return RankedRecommendations(items, kept_scores)


def rvi_rank(history: Sequence[int]) -> RankedRecommendations:
    """Unique history items ordered most recent first; for duplicates the
    latest occurrence decides the rank."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    last_seen: dict[int, int] = {}
    for position, item in enumerate(history):
        last_seen[item] = position
    ordered = sorted(last_seen.items(), key=lambda kv: -kv[1])
    items = [item for item, _ in ordered]
    scores = [float(pos) for _, pos in ordered]
    return RankedRecommendations(items, scores)
