"""Item embedding pretraining and lookup.

Items are embedded by treating each interaction sequence as a sentence and
each item as a word, training a continuous bag-of-words objective with
negative sampling, then unit-normalizing every row. The resulting matrix is
frozen while any downstream recommender trains on top of it.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .rng import substream


@dataclass
class CbowConfig:
    dim: int = 100
    window: int = 5
    negative_samples: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 1e-4
    min_count: int = 1
    include_future: bool = True

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.negative_samples < 1:
            raise ValueError(f"negative_samples must be >= 1, got {self.negative_samples}")


class EmbeddingMatrix:
    """One row per item index; optionally carries the item tokens."""

    def __init__(self, vectors: np.ndarray, tokens: Sequence[str] | None = None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError(f"expected a 2-d matrix, got shape {vectors.shape}")
        if tokens is not None and len(tokens) != vectors.shape[0]:
            raise ValueError("token count does not match row count")
        self.vectors = vectors
        self.tokens = list(tokens) if tokens is not None else None

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, item_index: int) -> np.ndarray:
        if not 0 <= item_index < self.vocab_size:
            raise IndexError(
                f"item index {item_index} out of range for vocabulary of {self.vocab_size}")
        return self.vectors[item_index]

    def checksum(self) -> int:
        return zlib.crc32(np.ascontiguousarray(self.vectors).tobytes())

    def save(self, path) -> None:
        meta = {"tokens": self.tokens} if self.tokens is not None else {}
        save_arrays(path, {"vectors": self.vectors}, meta=meta)

    @classmethod
    def load(cls, path) -> "EmbeddingMatrix":
        arrays, meta = load_arrays(path)
        return cls(arrays["vectors"], tokens=meta.get("tokens"))

    def save_text(self, path) -> None:
        """Plain text: header "vocab_size dim", then "token v1 v2 ..." per item."""
        tokens = self.tokens or [str(i) for i in range(self.vocab_size)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.vocab_size} {self.dim}\n")
            for token, row in zip(tokens, self.vectors):
                values = " ".join(repr(float(v)) for v in row)
                fh.write(f"{token} {values}\n")

    @classmethod
    def load_text(cls, path) -> "EmbeddingMatrix":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: malformed header line")
            vocab_size, dim = int(header[0]), int(header[1])
            tokens, rows = [], []
            for line_no, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split(" ")
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}: line {line_no}: expected {dim + 1} fields")
                tokens.append(parts[0])
                rows.append([float(v) for v in parts[1:]])
        if len(rows) != vocab_size:
            raise ValueError(f"{path}: header promised {vocab_size} rows, found {len(rows)}")
        return cls(np.array(rows), tokens=tokens)


def normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit L2 norm; idempotent. Zero rows are an error."""
    norms = np.linalg.norm(matrix.vectors, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        item = int(zero[0])
        token = matrix.tokens[item] if matrix.tokens else str(item)
        raise ValueError(f"cannot normalize zero vector for item {token} (index {item})")
    return EmbeddingMatrix(matrix.vectors / norms[:, None], tokens=matrix.tokens)


def negative_sampling_probs(counts: np.ndarray, power: float = 0.75) -> np.ndarray:
    """Unigram distribution raised to ``power`` and renormalized."""
    weights = np.asarray(counts, dtype=np.float64) ** power
    total = weights.sum()
    if total == 0.0:
        raise ValueError("all item counts are zero")
    return weights / total


def _as_index_sequences(sequences, include_future: bool) -> list[list[int]]:
    flat = []
    for seq in sequences:
        if hasattr(seq, "history"):
            items = list(seq.history) + (list(seq.future) if include_future else [])
        else:
            items = list(seq)
        flat.append(items)
    return flat


def _initial_vectors(vocab_size: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.random((vocab_size, dim)) - 0.5) / dim


def train_cbow(sequences: Iterable, vocab_size: int, config: CbowConfig,
               seed: int = 0) -> EmbeddingMatrix:
    """Train item vectors with a bag-of-context objective and negative sampling.

    ``sequences`` may be plain index lists or objects with ``history`` /
    ``future`` attributes (the future half is included when
    ``config.include_future`` is set). Returns the raw (not yet normalized)
    input vectors. Positions with no in-window context produce no update, so
    a corpus of singleton sequences returns the initialization untouched.
    """
    flat = _as_index_sequences(sequences, config.include_future)
    if not flat or all(len(s) == 0 for s in flat):
        raise ValueError("empty corpus: no sequences to train on")

    counts = np.zeros(vocab_size, dtype=np.int64)
    for items in flat:
        for item in items:
            if not 0 <= item < vocab_size:
                raise IndexError(f"item index {item} outside vocabulary of {vocab_size}")
            counts[item] += 1

    rng = substream(seed, "embedding")
    vectors = _initial_vectors(vocab_size, config.dim, rng)
    context_weights = np.zeros((vocab_size, config.dim))

    keep = counts >= config.min_count
    cumulative = np.cumsum(negative_sampling_probs(np.where(keep, counts, 0)))

    usable_seqs = [[i for i in items if keep[i]] for items in flat]
    total_positions = sum(len(s) for s in usable_seqs) * config.epochs
    lr_span = max(total_positions - 1, 1)
    position = 0
    for _ in range(config.epochs):
        for usable in usable_seqs:
            for center_pos, center in enumerate(usable):
                lr = config.learning_rate + (config.min_learning_rate -
                                             config.learning_rate) * (position / lr_span)
                position += 1
                lo = max(0, center_pos - config.window)
                hi = min(len(usable), center_pos + config.window + 1)
                context = usable[lo:center_pos] + usable[center_pos + 1:hi]
                if not context:
                    continue
                hidden = vectors[context].mean(axis=0)
                # positive target plus sampled negatives, logistic objective
                targets = [center]
                attempts = 0
                while len(targets) < config.negative_samples + 1 and attempts < 100 * config.negative_samples:
                    cand = int(np.searchsorted(cumulative, rng.random()))
                    attempts += 1
                    if cand != center:
                        targets.append(cand)
                labels = np.zeros(len(targets))
                labels[0] = 1.0
                out_rows = context_weights[targets]
                scores = 1.0 / (1.0 + np.exp(-(out_rows @ hidden)))
                gradient = (labels - scores) * lr
                context_weights[targets] += np.outer(gradient, hidden)
                error = gradient @ out_rows
                vectors[context] += error / len(context)
    return EmbeddingMatrix(vectors)


def initial_cbow_matrix(vocab_size: int, config: CbowConfig, seed: int = 0) -> EmbeddingMatrix:
    """The exact initialization ``train_cbow`` starts from for a given seed."""
    rng = substream(seed, "embedding")
    return EmbeddingMatrix(_initial_vectors(vocab_size, config.dim, rng))
