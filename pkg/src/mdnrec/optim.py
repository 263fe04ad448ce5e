"""Adam optimizer with bias-corrected moment estimates."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Tensor, is_checked


class Adam:
    """Adaptive moment estimation over an ordered list of parameters.

    Moment accumulators start at zero and carry the same shapes as their
    parameters. Optional global gradient-norm clipping (``clip_norm``) is off
    by default.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        """Apply one bias-corrected update in place; increments the step count."""
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for p, g in zip(self.params, grads):
            if p.data.shape != g.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{p.name or '<unnamed>'} shape {p.data.shape}")
        if is_checked():
            for p, g in zip(self.params, grads):
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(
                        f"non-finite gradient for parameter {p.name or '<unnamed>'}")
        if self.clip_norm is not None:
            total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = [g * scale for g in grads]
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.first_moment, self.second_moment):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
