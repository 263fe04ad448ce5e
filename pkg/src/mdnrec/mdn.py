"""Mixture density decoders and the Gaussian mixture log-density.

Two heads map a history encoding to mixture parameters. The feedforward
head owns one projection triple (mean, variance, weight logit) per
component. The recurrent head iterates one GRU step per component from a
zero state, shares a single projection triple across components, and
computes the component weights only after every step has run. With
attention enabled the recurrent head rebuilds its input at each step as a
weighted sum of encoder states, scored against its previous decoder state.

Variances pass through softplus plus a small positive floor so a component
can never collapse onto a single training vector. The mixture log-density
is evaluated with the log-sum-exp shift, which keeps it finite in high
dimensions where the naive product of per-dimension kernels underflows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import GruCell

VARIANCE_FLOOR = 1e-4
LOG_TWO_PI = float(np.log(2.0 * np.pi))


@dataclass
class MixtureParameters:
    """Detached (numpy) mixture for one user: weights on the simplex,
    per-component means in (-1, 1), and per-dimension variances above the floor."""

    weights: np.ndarray    # (m,)
    means: np.ndarray      # (m, d)
    variances: np.ndarray  # (m, d)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self, variance_floor: float = VARIANCE_FLOOR, tol: float = 1e-6) -> None:
        if abs(float(self.weights.sum()) - 1.0) > tol:
            raise ValueError(f"mixture weights sum to {self.weights.sum()!r}, not 1")
        if not np.all(self.weights > 0.0):
            raise ValueError("mixture weights must be strictly positive")
        if not np.all(self.variances >= variance_floor * (1.0 - 1e-12)):
            raise ValueError("variance entries below the configured floor")
        if not np.all(np.abs(self.means) < 1.0):
            raise ValueError("mean entries must lie strictly inside (-1, 1)")


class MixtureTensors:
    """Graph-mode mixture: weight tensor (..., m) plus per-component mean and
    variance tensors of shape (..., d). Batched when the leading axis is."""

    def __init__(self, weights: Tensor, means: list[Tensor], variances: list[Tensor]):
        self.weights = weights
        self.means = means
        self.variances = variances

    @property
    def n_components(self) -> int:
        return len(self.means)

    def detach(self) -> MixtureParameters:
        if self.weights.ndim != 1:
            raise ValueError("detach() expects an unbatched mixture; use detach_rows()")
        return MixtureParameters(
            weights=np.array(self.weights.data),
            means=np.stack([m.data for m in self.means]),
            variances=np.stack([v.data for v in self.variances]))

    def detach_rows(self) -> list[MixtureParameters]:
        if self.weights.ndim != 2:
            raise ValueError("detach_rows() expects a batched mixture")
        weights = self.weights.data
        means = np.stack([m.data for m in self.means], axis=1)      # (B, m, d)
        variances = np.stack([v.data for v in self.variances], axis=1)
        return [MixtureParameters(weights[b].copy(), means[b].copy(), variances[b].copy())
                for b in range(weights.shape[0])]


class FfDecoderWeights:
    """Per-component projection triples from the pooled history encoding."""

    def __init__(self, n_components: int, emb_dim: int, hidden_dim: int,
                 rng: np.random.Generator | None = None, init_scale: float = 0.08,
                 variance_floor: float = VARIANCE_FLOOR, prefix: str = "decoder",
                 dtype=ad.DEFAULT_DTYPE):
        if n_components < 1:
            raise ValueError("component count must be >= 1")
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_components = n_components
        self.variance_floor = variance_floor
        self.mean_w = [ad.parameter((emb_dim, hidden_dim), rng, init_scale,
                                    f"{prefix}/mean_w{i}", dtype) for i in range(n_components)]
        self.var_w = [ad.parameter((emb_dim, hidden_dim), rng, init_scale,
                                   f"{prefix}/var_w{i}", dtype) for i in range(n_components)]
        self.weight_w = [ad.parameter((1, hidden_dim), rng, init_scale,
                                      f"{prefix}/weight_w{i}", dtype) for i in range(n_components)]

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for group in (self.mean_w, self.var_w, self.weight_w):
            for t in group:
                out[t.name] = t
        return out


class AdditiveScorer:
    """Single-hidden-layer relevance score: v . tanh(W a + U h)."""

    def __init__(self, annotation_dim: int, state_dim: int, hidden_dim: int,
                 rng: np.random.Generator | None = None, init_scale: float = 0.08,
                 prefix: str = "scorer", dtype=ad.DEFAULT_DTYPE):
        if rng is None:
            rng = np.random.default_rng(0)
        self.w_annotation = ad.parameter((hidden_dim, annotation_dim), rng, init_scale,
                                         f"{prefix}/w_annotation", dtype)
        self.w_state = ad.parameter((hidden_dim, state_dim), rng, init_scale,
                                    f"{prefix}/w_state", dtype)
        self.v = ad.parameter((hidden_dim,), rng, init_scale, f"{prefix}/v", dtype)

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.w_annotation, self.w_state, self.v)}

    def __call__(self, annotation, state) -> Tensor:
        hidden = ad.tanh(ad.linear(annotation, self.w_annotation)
                         + ad.linear(state, self.w_state))
        return (hidden * self.v).sum(axis=-1, keepdims=True)


def score_attention(annotation, state, scorer: AdditiveScorer | None = None) -> Tensor:
    """Relevance of one history annotation to a decoder state.

    The default is the dot product (annotation and state dimensions match by
    construction); an additive scorer can be supplied instead. Returns shape
    (..., 1) so per-position scores concatenate along the last axis.
    """
    annotation = ad.as_tensor(annotation)
    state = ad.as_tensor(state)
    if scorer is not None:
        return scorer(annotation, state)
    if annotation.shape[-1] != state.shape[-1]:
        raise ad.ShapeError("score_attention", annotation.shape, state.shape)
    return (annotation * state).sum(axis=-1, keepdims=True)


class RnnDecoderWeights:
    """Recurrent mixture head: one GRU cell plus projection triples shared
    across components, and optionally an additive attention scorer."""

    def __init__(self, emb_dim: int, hidden_dim: int, rng: np.random.Generator | None = None,
                 init_scale: float = 0.08, variance_floor: float = VARIANCE_FLOOR,
                 scorer: str = "dot", annotation_dim: int | None = None,
                 prefix: str = "decoder", dtype=ad.DEFAULT_DTYPE):
        if rng is None:
            rng = np.random.default_rng(0)
        if scorer not in ("dot", "additive"):
            raise ValueError(f"unknown attention scorer {scorer!r}")
        self.hidden_dim = hidden_dim
        self.variance_floor = variance_floor
        self.cell = GruCell(hidden_dim, hidden_dim, rng, init_scale,
                            prefix=f"{prefix}/cell", dtype=dtype)
        self.mean_w = ad.parameter((emb_dim, hidden_dim), rng, init_scale,
                                   f"{prefix}/mean_w", dtype)
        self.var_w = ad.parameter((emb_dim, hidden_dim), rng, init_scale,
                                  f"{prefix}/var_w", dtype)
        self.weight_w = ad.parameter((1, hidden_dim), rng, init_scale,
                                     f"{prefix}/weight_w", dtype)
        self.scorer: AdditiveScorer | None = None
        if scorer == "additive":
            self.scorer = AdditiveScorer(annotation_dim or hidden_dim, hidden_dim,
                                         hidden_dim, rng, init_scale,
                                         prefix=f"{prefix}/scorer", dtype=dtype)

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.cell.parameters())
        for t in (self.mean_w, self.var_w, self.weight_w):
            out[t.name] = t
        if self.scorer is not None:
            out.update(self.scorer.parameters())
        return out


def decode_ff(pooled, weights: FfDecoderWeights) -> MixtureTensors:
    """Feedforward mixture head over a pooled history encoding."""
    pooled = ad.as_tensor(pooled)
    means = [ad.tanh(ad.linear(pooled, w)) for w in weights.mean_w]
    variances = [ad.softplus(ad.linear(pooled, w)) + weights.variance_floor
                 for w in weights.var_w]
    logits = ad.concat([ad.linear(pooled, w) for w in weights.weight_w], axis=-1)
    return MixtureTensors(ad.softmax(logits, axis=-1), means, variances)


def decode_rnn(source, weights: RnnDecoderWeights, n_components: int,
               return_attention: bool = False):
    """Recurrent mixture head; iterates exactly ``n_components`` steps.

    ``source`` is either the pooled history encoding (fed unchanged at every
    step) or an ``(encoder_states, annotations)`` pair, in which case each
    step consumes an attention-weighted sum of the encoder states, scored
    against the previous decoder state. Component weights are computed only
    after the final step.
    """
    if n_components < 1:
        raise ValueError("component count must be >= 1")
    attention_mode = isinstance(source, tuple)
    if attention_mode:
        encoder_states, annotations = source
        if len(encoder_states) == 0 or len(annotations) == 0:
            raise ValueError("attention decoding requires a non-empty history")
        if len(encoder_states) != len(annotations):
            raise ValueError("encoder states and annotations must align")
        lead = encoder_states[0].shape[:-1]
    else:
        source = ad.as_tensor(source)
        lead = source.shape[:-1]

    state = ad.zeros(lead + (weights.hidden_dim,))
    states: list[Tensor] = []
    attention_rows: list[Tensor] = []
    for _ in range(n_components):
        if attention_mode:
            scores = ad.concat([score_attention(a, state, weights.scorer)
                                for a in annotations], axis=-1)
            attended = ad.softmax(scores, axis=-1)
            attention_rows.append(attended)
            step_input = attended[..., 0:1] * encoder_states[0]
            for i in range(1, len(encoder_states)):
                step_input = step_input + attended[..., i:i + 1] * encoder_states[i]
        else:
            step_input = source
        state = weights.cell.step(step_input, state)
        states.append(state)

    means = [ad.tanh(ad.linear(s, weights.mean_w)) for s in states]
    variances = [ad.softplus(ad.linear(s, weights.var_w)) + weights.variance_floor
                 for s in states]
    logits = ad.concat([ad.linear(s, weights.weight_w) for s in states], axis=-1)
    mixture = MixtureTensors(ad.softmax(logits, axis=-1), means, variances)
    if return_attention:
        return mixture, attention_rows
    return mixture


def log_density(target, mixture: MixtureTensors) -> Tensor:
    """Log of the mixture density at ``target``, via log-sum-exp over components.

    ``target`` may be one vector (d,), a set of vectors (n, d) scored under
    the same mixture, or a batch (batch, d) aligned with a batched mixture.
    """
    target = ad.as_tensor(target)
    log_weights = ad.log(mixture.weights)
    component_terms = []
    for j in range(mixture.n_components):
        mean = mixture.means[j]
        var = mixture.variances[j]
        diff = target - mean
        quad = ((diff * diff) / var).sum(axis=-1)
        log_norm = (ad.log(var) + LOG_TWO_PI).sum(axis=-1)
        component_terms.append(-0.5 * (quad + log_norm) + log_weights[..., j])
    return ad.logsumexp(ad.stack(component_terms, axis=-1), axis=-1)


def log_density_all(vectors: np.ndarray, params: MixtureParameters) -> np.ndarray:
    """Vectorized numpy log-density of every row of ``vectors`` under one
    detached mixture; used to rank a whole vocabulary."""
    vectors = np.asarray(vectors)
    terms = np.empty((vectors.shape[0], params.n_components))
    log_weights = np.log(params.weights)
    for j in range(params.n_components):
        diff = vectors - params.means[j]
        quad = (diff * diff / params.variances[j]).sum(axis=1)
        log_norm = float((np.log(params.variances[j]) + LOG_TWO_PI).sum())
        terms[:, j] = -0.5 * (quad + log_norm) + log_weights[j]
    peak = terms.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(terms - peak).sum(axis=1, keepdims=True))).ravel()
