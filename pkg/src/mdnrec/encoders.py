"""History encoders: bag-of-items, recurrent, and bidirectional annotation.

Every encoder is a pure function of (weights, inputs) and accepts either a
single history (a 1-d sequence of item indices) or a batch of equal-length
histories (a 2-d index array); batched activations carry a leading batch
axis through every step.

On the attention pathway the decoder scores annotation vectors against its
own recurrent state from the previous step; that is the causally available
state, since the current step's state is only produced after the attended
summary is consumed.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embeddings import EmbeddingMatrix


class GruCell:
    """Gated recurrent unit without bias terms.

    The update gate and the candidate state both apply their recurrent
    weights to the reset-scaled previous state.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator | None = None,
                 init_scale: float = 0.08, prefix: str = "gru", dtype=ad.DEFAULT_DTYPE):
        if rng is None:
            rng = np.random.default_rng(0)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim

        def make(shape, name):
            return ad.parameter(shape, rng, scale=init_scale,
                                name=f"{prefix}/{name}", dtype=dtype)

        self.w_reset = make((hidden_dim, input_dim), "w_reset")
        self.u_reset = make((hidden_dim, hidden_dim), "u_reset")
        self.w_update = make((hidden_dim, input_dim), "w_update")
        self.u_update = make((hidden_dim, hidden_dim), "u_update")
        self.w_cand = make((hidden_dim, input_dim), "w_cand")
        self.u_cand = make((hidden_dim, hidden_dim), "u_cand")

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.w_reset, self.u_reset, self.w_update,
                                    self.u_update, self.w_cand, self.u_cand)}

    def step(self, x, h_prev) -> Tensor:
        x = ad.as_tensor(x)
        h_prev = ad.as_tensor(h_prev)
        if x.shape[-1] != self.input_dim or h_prev.shape[-1] != self.hidden_dim:
            raise ad.ShapeError("gru_step", x.shape, h_prev.shape)
        reset = ad.sigmoid(ad.linear(x, self.w_reset) + ad.linear(h_prev, self.u_reset))
        gated_prev = reset * h_prev
        update = ad.sigmoid(ad.linear(x, self.w_update) + ad.linear(gated_prev, self.u_update))
        candidate = ad.tanh(ad.linear(x, self.w_cand) + ad.linear(gated_prev, self.u_cand))
        return (1.0 - update) * h_prev + update * candidate


def gru_step(x, h_prev, cell: GruCell) -> Tensor:
    """One recurrent update; see ``GruCell.step``."""
    return cell.step(x, h_prev)


def _check_history(history) -> np.ndarray:
    arr = np.asarray(history)
    if arr.size == 0 or arr.shape[-1] == 0:
        raise ValueError("history must be non-empty")
    if arr.ndim not in (1, 2):
        raise ValueError(f"history must be 1-d or 2-d, got shape {arr.shape}")
    return arr.astype(np.intp)


def _embed_step(emb: EmbeddingMatrix, history: np.ndarray, position: int) -> Tensor:
    return Tensor(emb.vectors[history[..., position]])


def encode_cboi(history, emb: EmbeddingMatrix) -> Tensor:
    """Frequency-weighted sum of the history's item vectors; order-invariant."""
    history = _check_history(history)
    return Tensor(emb.vectors[history].sum(axis=-2))


def encode_recurrent(history, emb: EmbeddingMatrix, cell: GruCell) -> tuple[list[Tensor], Tensor]:
    """Run the history through a recurrent reader started from a zero state.

    Returns the per-step states and their mean, the pooled history vector.
    """
    history = _check_history(history)
    steps = history.shape[-1]
    state_shape = history.shape[:-1] + (cell.hidden_dim,)
    state = ad.zeros(state_shape)
    states: list[Tensor] = []
    for position in range(steps):
        state = cell.step(_embed_step(emb, history, position), state)
        states.append(state)
    pooled = states[0]
    for s in states[1:]:
        pooled = pooled + s
    pooled = pooled * (1.0 / steps)
    return states, pooled


def encode_annotations(history, emb: EmbeddingMatrix, forward_cell: GruCell,
                       backward_cell: GruCell) -> list[Tensor]:
    """Bidirectional annotation vectors, one per history position.

    Each annotation concatenates the forward reader's state at that position
    with the backward reader's state at the same position (the backward
    reader consumes the history reversed).
    """
    history = _check_history(history)
    steps = history.shape[-1]

    fwd_state = ad.zeros(history.shape[:-1] + (forward_cell.hidden_dim,))
    forward_states = []
    for position in range(steps):
        fwd_state = forward_cell.step(_embed_step(emb, history, position), fwd_state)
        forward_states.append(fwd_state)

    bwd_state = ad.zeros(history.shape[:-1] + (backward_cell.hidden_dim,))
    backward_states: list[Tensor | None] = [None] * steps
    for position in reversed(range(steps)):
        bwd_state = backward_cell.step(_embed_step(emb, history, position), bwd_state)
        backward_states[position] = bwd_state

    return [ad.concat([forward_states[i], backward_states[i]], axis=-1)
            for i in range(steps)]
