"""Likelihood training with validation-based early stopping.

A sequence's loss is the negated mean log-density of its future items under
the single mixture decoded from its history; the training objective averages
that per-sequence value over the mini-batch. Batches group sequences of
equal history and future length, so no padding is ever needed. After each
epoch the harmonic mean of precision and recall at a fixed cutoff is
measured on the validation split, and training stops once it has failed to
improve for more than ``patience`` consecutive epochs, restoring the best
snapshot.

The reference mode is single-threaded and bit-reproducible: identical
config and seed give identical parameter trajectories and checkpoints. The
wall-clock column of the training log is the one field that varies between
runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import DatasetBundle, InteractionSequence
from .evaluation import f1_score, precision_at_k, rank_items, recall_at_k
from .mdn import log_density
from .models import Recommender
from .optim import Adam
from .rng import substream


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = None
    f1_cutoff: int = 20
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    valid_f1: float
    seconds: float

    def row(self) -> str:
        # full-precision reprs so the deterministic fields compare exactly
        return f"{self.epoch},{self.train_nll!r},{self.valid_f1!r},{self.seconds:.3f}"


@dataclass
class TrainResult:
    best_epoch: int
    best_f1: float
    epochs_run: int
    log: list[EpochRecord] = field(default_factory=list)


def sequence_loss(model: Recommender, sequence: InteractionSequence) -> Tensor:
    """Negated length-normalized log-likelihood of one sequence's future.

    The history is decoded once; every future item is scored against that
    same mixture.
    """
    if len(sequence.future) == 0:
        raise ValueError("sequence has an empty future")
    mixture = model.mixture(sequence.history)
    targets = model.embeddings.vectors[np.asarray(sequence.future)]
    return -log_density(targets, mixture).mean()


def batch_loss(model: Recommender, histories: np.ndarray, futures: np.ndarray) -> Tensor:
    """Mean per-sequence loss over a batch of equal-shape sequences."""
    if futures.shape[1] == 0:
        raise ValueError("batch has empty futures")
    mixture = model.mixture(histories)
    per_item = []
    for j in range(futures.shape[1]):
        targets = Tensor(model.embeddings.vectors[futures[:, j]])
        per_item.append(log_density(targets, mixture))
    total = per_item[0]
    for chunk in per_item[1:]:
        total = total + chunk
    return -(total * (1.0 / futures.shape[1])).mean()


def validation_f1(model: Recommender, sequences: list[InteractionSequence],
                  cutoff: int = 20) -> float:
    """Mean per-user harmonic mean of precision and recall at ``cutoff``.

    Users are grouped by history length so the forward passes run batched.
    """
    by_length: dict[int, list[InteractionSequence]] = {}
    for seq in sequences:
        if seq.future:
            by_length.setdefault(len(seq.history), []).append(seq)
    total = 0.0
    count = 0
    for _, group in sorted(by_length.items()):
        histories = np.array([s.history for s in group])
        for params, seq in zip(model.predict_batch(histories), group):
            ranked = rank_items(params, model.embeddings,
                                k=min(cutoff, model.embeddings.vocab_size))
            p = precision_at_k(ranked.items, seq.future, cutoff)
            r = recall_at_k(ranked.items, seq.future, cutoff)
            total += f1_score(p, r)
            count += 1
    if count == 0:
        raise ValueError("no validation sequences with non-empty futures")
    return total / count


def _batches(sequences: list[InteractionSequence], batch_size: int,
             rng: np.random.Generator):
    """Shuffled batches of sequences sharing (history length, future length)."""
    order = rng.permutation(len(sequences))
    pending: dict[tuple[int, int], list[InteractionSequence]] = {}
    for idx in order:
        seq = sequences[idx]
        key = (len(seq.history), len(seq.future))
        bucket = pending.setdefault(key, [])
        bucket.append(seq)
        if len(bucket) == batch_size:
            yield bucket
            pending[key] = []
    for key in sorted(pending):
        if pending[key]:
            yield pending[key]


def train(model: Recommender, bundle: DatasetBundle, config: TrainConfig,
          log_path=None) -> TrainResult:
    """Optimize the model on the bundle's training split.

    Returns the epoch log and restores the parameters that achieved the best
    validation score. ``log_path``, when given, receives one appended
    "epoch,train_nll,valid_f1@K,seconds" row per epoch.
    """
    if not bundle.train:
        raise ValueError("empty training split")
    embedding_checksum = model.embeddings.checksum()
    shuffle_rng = substream(config.seed, "shuffle")
    params = model.parameters()
    optimizer = Adam(list(params.values()), lr=config.learning_rate,
                     beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                     clip_norm=config.grad_clip)
    param_list = list(params.values())

    best_f1 = -np.inf
    best_epoch = 0
    best_state = {name: t.data.copy() for name, t in params.items()}
    stale_epochs = 0
    log: list[EpochRecord] = []
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            started = time.monotonic()
            nll_total = 0.0
            nll_count = 0
            for batch in _batches(bundle.train, config.batch_size, shuffle_rng):
                histories = np.array([s.history for s in batch])
                futures = np.array([s.future for s in batch])
                with Tape() as tape:
                    loss = batch_loss(model, histories, futures)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise RuntimeError(
                            f"non-finite loss {value!r} at epoch {epoch} "
                            f"(batch of {len(batch)}, history length {histories.shape[1]})")
                    grads = tape.backward(loss, params=param_list)
                optimizer.step(grads)
                nll_total += value * len(batch)
                nll_count += len(batch)
            train_nll = nll_total / nll_count
            valid_f1 = validation_f1(model, bundle.valid, config.f1_cutoff)
            record = EpochRecord(epoch, train_nll, valid_f1,
                                 time.monotonic() - started)
            log.append(record)
            if log_file:
                log_file.write(record.row() + "\n")
                log_file.flush()
            if valid_f1 > best_f1:
                best_f1 = valid_f1
                best_epoch = epoch
                best_state = {name: t.data.copy() for name, t in params.items()}
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs > config.patience:
                    break
    finally:
        if log_file:
            log_file.close()
    model.load_state_arrays(best_state)
    if model.embeddings.checksum() != embedding_checksum:
        raise RuntimeError("embedding matrix changed during training")
    return TrainResult(best_epoch=best_epoch, best_f1=best_f1,
                       epochs_run=len(log), log=log)


def heldout_log_likelihood(model: Recommender, sequences: list[InteractionSequence]) -> float:
    """Mean per-sequence mean log-density of future items (higher is better)."""
    by_shape: dict[tuple[int, int], list[InteractionSequence]] = {}
    for seq in sequences:
        if seq.future:
            by_shape.setdefault((len(seq.history), len(seq.future)), []).append(seq)
    total = 0.0
    count = 0
    for _, group in sorted(by_shape.items()):
        histories = np.array([s.history for s in group])
        futures = np.array([s.future for s in group])
        value = batch_loss(model, histories, futures).item()
        total += -value * len(group)
        count += len(group)
    if count == 0:
        raise ValueError("no sequences with non-empty futures")
    return total / count
