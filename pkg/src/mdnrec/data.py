"""Dataset ingestion, preprocessing, synthetic corpora, and persistence.

Preprocessing turns raw interaction logs into fixed history/future splits,
builds the item vocabulary from the training split only, and drops
validation/test items that fall outside it (recorded in a drop statistic).
The synthetic generator places items in well-separated unit-norm clusters
and maps each history type to a configurable number of future clusters, so
multi-modal prediction quality can be measured against known ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingMatrix
from .rng import substream


class DataError(ValueError):
    """Malformed input row; the message carries the line number."""


@dataclass
class InteractionSequence:
    """One user's chronological items, split into conditioning history and
    prediction targets."""

    user: str
    history: list[int]
    future: list[int]


class ItemVocabulary:
    """Bijection between item tokens and dense indices."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {token: i for i, token in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @classmethod
    def from_token_sequences(cls, sequences: Iterable[Sequence[str]]) -> "ItemVocabulary":
        """First-appearance ordering over the given (training) sequences."""
        seen: dict[str, None] = {}
        for seq in sequences:
            for token in seq:
                seen.setdefault(token, None)
        return cls(list(seen))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.tokens:
                fh.write(f"{token}\n")

    @classmethod
    def load(cls, path) -> "ItemVocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh])


@dataclass
class DatasetBundle:
    train: list[InteractionSequence]
    valid: list[InteractionSequence]
    test: list[InteractionSequence]
    vocabulary: ItemVocabulary
    provenance: dict = field(default_factory=dict)

    @property
    def splits(self) -> dict[str, list[InteractionSequence]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}


def split(items: Sequence, ratios: Sequence[float], rng: np.random.Generator):
    """Random disjoint partition with cumulative-rounding boundaries, so the
    part sizes are each within one of the exact proportions."""
    ratios = list(ratios)
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    if any(r < 0 for r in ratios):
        raise ValueError("split ratios must be non-negative")
    n = len(items)
    order = rng.permutation(n)
    boundaries = [int(round(n * c)) for c in np.cumsum(ratios)]
    parts = []
    start = 0
    for end in boundaries:
        parts.append([items[i] for i in order[start:end]])
        start = end
    return tuple(parts)


# ---------------------------------------------------------------------------
# raw file ingestion
# ---------------------------------------------------------------------------

MOVIELENS_COLUMNS = {"user": "userId", "item": "movieId",
                     "rating": "rating", "timestamp": "timestamp"}
RECSYS_COLUMNS = {"session": "sessionId", "item": "itemId", "timestamp": "timestamp"}


def _read_delimited(path, delimiter: str, required: Sequence[str],
                    columns: dict[str, str]):
    """Yield (line_number, {field: raw string}) for a headered text file."""
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        positions = {}
        for name in required:
            column = columns[name]
            if column not in header:
                raise DataError(f"{path}: header is missing column {column!r}")
            positions[name] = header.index(column)
        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}: line {line_no}: expected {width} fields, got {len(row)}")
            yield line_no, {name: row[pos] for name, pos in positions.items()}


def _rows_or_file(source, delimiter, required, columns):
    if isinstance(source, (str, Path)):
        yield from _read_delimited(source, delimiter, required, columns)
    else:
        for line_no, row in enumerate(source, start=1):
            if len(row) != len(required):
                raise DataError(f"line {line_no}: expected {len(required)} fields, got {len(row)}")
            yield line_no, dict(zip(required, row))


def _finish_bundle(raw_sequences: list[tuple[str, list[str], list[str]]],
                   seed: int, provenance: dict,
                   ratios: Sequence[float] = (0.8, 0.1, 0.1)) -> DatasetBundle:
    """Split by sequence, build the vocabulary from the training split, and
    drop out-of-vocabulary items from the other splits."""
    train_raw, valid_raw, test_raw = split(raw_sequences, ratios, substream(seed, "split"))
    vocabulary = ItemVocabulary.from_token_sequences(
        [list(h) + list(f) for _, h, f in train_raw])

    def to_indices(raw, drop_allowed: bool):
        kept = []
        items_dropped = 0
        sequences_dropped = 0
        for user, history, future in raw:
            if drop_allowed:
                h = [vocabulary.index[t] for t in history if t in vocabulary]
                f = [vocabulary.index[t] for t in future if t in vocabulary]
                items_dropped += (len(history) - len(h)) + (len(future) - len(f))
                if not h or not f:
                    sequences_dropped += 1
                    continue
            else:
                h = [vocabulary.index[t] for t in history]
                f = [vocabulary.index[t] for t in future]
            kept.append(InteractionSequence(user=user, history=h, future=f))
        return kept, items_dropped, sequences_dropped

    train, _, _ = to_indices(train_raw, drop_allowed=False)
    valid, vi, vs = to_indices(valid_raw, drop_allowed=True)
    test, ti, ts = to_indices(test_raw, drop_allowed=True)
    provenance = dict(provenance)
    provenance["seed"] = seed
    provenance["oov_items_dropped"] = vi + ti
    provenance["oov_sequences_dropped"] = vs + ts
    return DatasetBundle(train=train, valid=valid, test=test,
                         vocabulary=vocabulary, provenance=provenance)


def preprocess_movielens(source, *, seed: int = 0, min_positive_rating: float = 4.0,
                         min_positives: int = 15, history_len: int = 10,
                         future_len: int = 5, columns: dict[str, str] | None = None,
                         delimiter: str = ",") -> DatasetBundle:
    """Explicit ratings to implicit sequences.

    Rows with rating below the threshold are discarded. Each user's positives
    are sorted by timestamp (stable, so equal timestamps keep input order);
    users with fewer than ``min_positives`` are excluded, and only the last
    ``history_len + future_len`` items per user are kept, split
    chronologically into history then future. This dataset has no repeated
    items within a user, and that is asserted rather than silently fixed.
    """
    columns = columns or MOVIELENS_COLUMNS
    per_user: dict[str, list[tuple[float, int, str]]] = {}
    order = 0
    for line_no, row in _rows_or_file(source, delimiter,
                                      ("user", "item", "rating", "timestamp"), columns):
        try:
            rating = float(row["rating"])
            timestamp = float(row["timestamp"])
        except ValueError:
            raise DataError(f"line {line_no}: non-numeric rating or timestamp") from None
        if rating < min_positive_rating:
            continue
        per_user.setdefault(str(row["user"]), []).append((timestamp, order, str(row["item"])))
        order += 1

    window = history_len + future_len
    raw_sequences = []
    for user, events in per_user.items():
        if len(events) < min_positives:
            continue
        events.sort(key=lambda e: (e[0], e[1]))
        items = [item for _, _, item in events[-window:]]
        if len(set(items)) != len(items):
            raise DataError(f"user {user}: repeated item within one sequence")
        raw_sequences.append((user, items[:history_len], items[history_len:]))

    provenance = {"source": "movielens", "min_positive_rating": min_positive_rating,
                  "min_positives": min_positives, "history_len": history_len,
                  "future_len": future_len}
    return _finish_bundle(raw_sequences, seed, provenance)


def preprocess_recsys(source, *, seed: int = 0, min_length: int = 15,
                      history_len: int = 13, future_len: int = 2,
                      columns: dict[str, str] | None = None,
                      delimiter: str = ",") -> DatasetBundle:
    """Click streams to session sequences.

    Sessions shorter than ``min_length`` are excluded. The first
    ``history_len`` clicks become the history and the final ``future_len``
    clicks the future; repeated items are kept, so an item may sit in both
    halves.
    """
    columns = columns or RECSYS_COLUMNS
    per_session: dict[str, list[tuple[float, int, str]]] = {}
    order = 0
    for line_no, row in _rows_or_file(source, delimiter,
                                      ("session", "item", "timestamp"), columns):
        try:
            timestamp = float(row["timestamp"])
        except ValueError:
            raise DataError(f"line {line_no}: non-numeric timestamp") from None
        per_session.setdefault(str(row["session"]), []).append((timestamp, order, str(row["item"])))
        order += 1

    raw_sequences = []
    for session, events in per_session.items():
        if len(events) < min_length:
            continue
        events.sort(key=lambda e: (e[0], e[1]))
        items = [item for _, _, item in events]
        raw_sequences.append((session, items[:history_len], items[-future_len:]))

    provenance = {"source": "recsys", "min_length": min_length,
                  "history_len": history_len, "future_len": future_len}
    return _finish_bundle(raw_sequences, seed, provenance)


# ---------------------------------------------------------------------------
# synthetic corpora with known modality
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    vocab_size: int = 200
    n_sequences: int = 2000
    history_types: int = 2
    modality: int = 2
    emb_dim: int = 16
    history_len: int = 5
    future_len: int = 5
    item_noise: float = 0.15
    future_popularity: float = 1.2
    order_sensitive: bool = False
    min_cosine_distance: float = 0.5
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.modality < 1:
            raise ValueError("modality must be >= 1")
        if self.history_types < 1:
            raise ValueError("history_types must be >= 1")
        if self.order_sensitive and self.history_types != 2:
            raise ValueError("order-sensitive corpora use exactly 2 history types")
        if self.order_sensitive and self.history_len < 3:
            raise ValueError("order-sensitive histories need length >= 3")

    @property
    def planes_per_type(self) -> int:
        return (self.modality + 1) // 2

    @property
    def n_clusters(self) -> int:
        mode_side = self.history_types * self.planes_per_type * 4
        return (3 if self.order_sensitive else self.history_types) + mode_side

    @property
    def n_axes(self) -> int:
        mode_axes = self.history_types * self.planes_per_type * 2
        base = 2 if self.order_sensitive else (self.history_types + 1) // 2
        return base + mode_axes


def _build_geometry(config: SyntheticConfig, rng: np.random.Generator):
    """Cluster centers with per-type future modes on plane diagonals.

    Mode clusters sit at the +/- diagonal of a dedicated orthonormal plane
    and the two anti-diagonal clusters of the same plane are decoys: an
    axis-aligned diagonal covariance cannot tell diagonal from anti-diagonal
    directions apart, so the multi-modal structure only yields to a model
    that can place probability mass at several distinct points. History
    (and filler/marker) clusters occupy their own axes.
    """
    if config.n_axes > config.emb_dim:
        raise ValueError(
            f"cannot separate {config.n_clusters} clusters ({config.n_axes} axes) "
            f"in {config.emb_dim} dimensions; raise emb_dim or lower the cluster count")
    gauss = rng.standard_normal((config.emb_dim, config.n_axes))
    q, _ = np.linalg.qr(gauss)
    axes = q.T  # orthonormal rows

    centers: list[np.ndarray] = []
    if config.order_sensitive:
        centers.append(axes[0])          # shared filler
        centers.append(axes[1])          # first marker
        centers.append(-axes[1])         # second marker
        mode_axis_base = 2
    else:
        for t in range(config.history_types):
            sign = 1.0 if t % 2 == 0 else -1.0
            centers.append(sign * axes[t // 2])
        mode_axis_base = (config.history_types + 1) // 2

    root_half = 1.0 / np.sqrt(2.0)
    mode_clusters: list[list[int]] = []
    for t in range(config.history_types):
        modes_t: list[int] = []
        for plane in range(config.planes_per_type):
            base = mode_axis_base + (t * config.planes_per_type + plane) * 2
            a, b = axes[base], axes[base + 1]
            diag = (a + b) * root_half
            anti = (a - b) * root_half
            plane_start = len(centers)
            centers.extend([diag, -diag, anti, -anti])
            modes_t.extend([plane_start, plane_start + 1])  # the two diagonals
        mode_clusters.append(modes_t[:config.modality])
    return np.array(centers), mode_clusters


def generate_synthetic(config: SyntheticConfig, seed: int = 0
                       ) -> tuple[DatasetBundle, EmbeddingMatrix]:
    """Build a corpus whose conditional future distribution has a known
    number of modes per history type, together with ground-truth item
    vectors (separated unit-norm clusters plus small re-normalized noise).

    Raises if the generated items of different clusters come closer than
    ``min_cosine_distance`` in cosine distance.
    """
    rng = substream(seed, "synthetic")
    centers, mode_clusters = _build_geometry(config, rng)
    n_clusters = len(centers)

    item_cluster = np.arange(config.vocab_size) % n_clusters
    directions = rng.standard_normal((config.vocab_size, config.emb_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    vectors = centers[item_cluster] + config.item_noise * directions
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)

    # post-generation separation check on the items themselves
    sims = vectors @ vectors.T
    cross = item_cluster[:, None] != item_cluster[None, :]
    worst = float(sims[cross].max()) if cross.any() else -1.0
    if 1.0 - worst < config.min_cosine_distance:
        raise ValueError(
            f"cluster separation violated: closest cross-cluster cosine distance "
            f"{1.0 - worst:.3f} < {config.min_cosine_distance}; lower item_noise")

    members = [np.nonzero(item_cluster == c)[0] for c in range(n_clusters)]

    # within-cluster popularity: items closer to their cluster center are
    # drawn as future targets more often (Zipf over the centrality rank)
    popularity: list[np.ndarray] = []
    for c, member in enumerate(members):
        centrality = vectors[member] @ centers[c]
        ranked = member[np.argsort(-centrality, kind="stable")]
        members[c] = ranked
        if config.future_popularity > 0 and len(ranked) > 0:
            weights = 1.0 / np.arange(1, len(ranked) + 1) ** config.future_popularity
            popularity.append(weights / weights.sum())
        else:
            popularity.append(np.full(len(ranked), 1.0 / max(len(ranked), 1)))

    if config.order_sensitive:
        filler_cluster = 0
        marker_clusters = (1, 2)

    sequences = []
    type_labels = []
    for s in range(config.n_sequences):
        t = int(rng.integers(config.history_types))
        type_labels.append(t)
        if config.order_sensitive:
            filler = rng.choice(members[filler_cluster], size=config.history_len - 2)
            first = rng.choice(members[marker_clusters[0]])
            second = rng.choice(members[marker_clusters[1]])
            markers = [first, second] if t == 0 else [second, first]
            history = [int(i) for i in filler] + [int(m) for m in markers]
        else:
            history = [int(i) for i in rng.choice(members[t], size=config.history_len)]
        future = []
        for _ in range(config.future_len):
            mode = mode_clusters[t][int(rng.integers(config.modality))]
            future.append(int(rng.choice(members[mode], p=popularity[mode])))
        sequences.append(InteractionSequence(user=f"u{s:05d}", history=history, future=future))

    train, valid, test = split(sequences, config.ratios, substream(seed, "split"))
    vocabulary = ItemVocabulary([f"item{i}" for i in range(config.vocab_size)])
    provenance = {
        "source": "synthetic",
        "seed": seed,
        "history_types": config.history_types,
        "modality": config.modality,
        "order_sensitive": config.order_sensitive,
        "item_cluster": [int(c) for c in item_cluster],
        "mode_clusters": mode_clusters,
        "sequence_types": type_labels,
        "oov_items_dropped": 0,
        "oov_sequences_dropped": 0,
    }
    bundle = DatasetBundle(train=train, valid=valid, test=test,
                           vocabulary=vocabulary, provenance=provenance)
    emb = EmbeddingMatrix(vectors, tokens=vocabulary.tokens)
    return bundle, emb


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_bundle(directory, bundle: DatasetBundle) -> None:
    """Vocabulary as one token per line (line number = index); each split as
    tab-separated "user<TAB>h1,h2,...<TAB>f1,f2,..." rows."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bundle.vocabulary.save(directory / "vocabulary.txt")
    for name, sequences in bundle.splits.items():
        with open(directory / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for seq in sequences:
                history = ",".join(str(i) for i in seq.history)
                future = ",".join(str(i) for i in seq.future)
                fh.write(f"{seq.user}\t{history}\t{future}\n")
    with open(directory / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump(bundle.provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(directory) -> DatasetBundle:
    directory = Path(directory)
    if not (directory / "vocabulary.txt").exists():
        raise FileNotFoundError(f"no dataset at {directory}")
    vocabulary = ItemVocabulary.load(directory / "vocabulary.txt")
    splits = {}
    for name in ("train", "valid", "test"):
        sequences = []
        with open(directory / f"{name}.tsv", "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise DataError(f"{name}.tsv: line {line_no}: expected 3 fields")
                user, history, future = parts
                sequences.append(InteractionSequence(
                    user=user,
                    history=[int(i) for i in history.split(",")] if history else [],
                    future=[int(i) for i in future.split(",")] if future else []))
        splits[name] = sequences
    provenance_path = directory / "provenance.json"
    provenance = {}
    if provenance_path.exists():
        provenance = json.loads(provenance_path.read_text())
    return DatasetBundle(train=splits["train"], valid=splits["valid"],
                         test=splits["test"], vocabulary=vocabulary,
                         provenance=provenance)
