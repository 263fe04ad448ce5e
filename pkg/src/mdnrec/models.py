"""Recommender assembly: encoder choice x decoder choice x component count.

Model names follow "<encoder>-<decoder>-<components>", e.g. ``CBOI-FF-2``,
``RNN-FF-1``, ``RNN-RNN-4``, ``RNN-ATT-RNN-8``. The attention encoder is
only meaningful with the recurrent decoder (its scores target the decoder's
step states), which is enforced at configuration time.

The item embedding matrix is supplied pretrained and is never a trainable
parameter; only encoder/decoder weights move during training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_arrays, save_arrays
from .embeddings import EmbeddingMatrix
from .encoders import GruCell, encode_annotations, encode_cboi, encode_recurrent
from .mdn import (VARIANCE_FLOOR, FfDecoderWeights, MixtureParameters, MixtureTensors,
                  RnnDecoderWeights, decode_ff, decode_rnn)

ENCODERS = ("CBOI", "RNN", "RNN_ATT")
DECODERS = ("FF", "RNN")


@dataclass
class ModelConfig:
    encoder: str = "RNN"
    decoder: str = "RNN"
    n_components: int = 1
    emb_dim: int = 100
    hidden_dim: int = 256
    variance_floor: float = VARIANCE_FLOOR
    attention_scorer: str = "dot"
    init_scale: float = 0.08
    dtype: str = "float64"

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}; choose from {ENCODERS}")
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}; choose from {DECODERS}")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.encoder == "RNN_ATT" and self.decoder != "RNN":
            raise ValueError("the attention encoder requires the recurrent decoder")
        if self.encoder == "RNN_ATT" and self.hidden_dim % 2 != 0:
            raise ValueError("attention models need an even hidden_dim "
                             "(annotations use half per direction)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def name(self) -> str:
        encoder = self.encoder.replace("_", "-")
        return f"{encoder}-{self.decoder}-{self.n_components}"

    @classmethod
    def from_name(cls, name: str, **overrides) -> "ModelConfig":
        """Parse "CBOI-FF-2" / "RNN-ATT-RNN-4" style names."""
        parts = name.upper().split("-")
        if len(parts) < 3:
            raise ValueError(f"cannot parse model name {name!r}")
        try:
            n_components = int(parts[-1])
        except ValueError:
            raise ValueError(f"model name {name!r} must end in a component count") from None
        decoder = parts[-2]
        encoder = "_".join(parts[:-2])
        return cls(encoder=encoder, decoder=decoder, n_components=n_components, **overrides)


class Recommender:
    """History encoder plus mixture decoder over a frozen embedding matrix."""

    def __init__(self, config: ModelConfig, embeddings: EmbeddingMatrix,
                 rng: np.random.Generator | None = None):
        if embeddings.dim != config.emb_dim:
            raise ValueError(f"embedding dim {embeddings.dim} does not match "
                             f"config emb_dim {config.emb_dim}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        self.embeddings = embeddings
        dtype = np.float64 if config.dtype == "float64" else np.float32
        scale = config.init_scale
        hidden = config.hidden_dim

        self.encoder_cell: GruCell | None = None
        self.annotation_fwd: GruCell | None = None
        self.annotation_bwd: GruCell | None = None
        self.cboi_projection: Tensor | None = None

        if config.encoder == "CBOI":
            self.cboi_projection = ad.parameter((hidden, config.emb_dim), rng, scale,
                                                "encoder/projection", dtype)
        else:
            self.encoder_cell = GruCell(config.emb_dim, hidden, rng, scale,
                                        prefix="encoder", dtype=dtype)
        if config.encoder == "RNN_ATT":
            half = hidden // 2
            self.annotation_fwd = GruCell(config.emb_dim, half, rng, scale,
                                          prefix="annotator_fwd", dtype=dtype)
            self.annotation_bwd = GruCell(config.emb_dim, half, rng, scale,
                                          prefix="annotator_bwd", dtype=dtype)

        if config.decoder == "FF":
            self.decoder: FfDecoderWeights | RnnDecoderWeights = FfDecoderWeights(
                config.n_components, config.emb_dim, hidden, rng, scale,
                config.variance_floor, prefix="decoder", dtype=dtype)
        else:
            self.decoder = RnnDecoderWeights(
                config.emb_dim, hidden, rng, scale, config.variance_floor,
                scorer=config.attention_scorer, annotation_dim=hidden,
                prefix="decoder", dtype=dtype)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.cboi_projection is not None:
            out[self.cboi_projection.name] = self.cboi_projection
        for cell in (self.encoder_cell, self.annotation_fwd, self.annotation_bwd):
            if cell is not None:
                out.update(cell.parameters())
        out.update(self.decoder.parameters())
        return out

    def mixture(self, history) -> MixtureTensors:
        """Mixture parameters for one history (1-d) or a batch (2-d).

        Differentiable: run inside a ``Tape`` to record gradients.
        """
        config = self.config
        if config.encoder == "CBOI":
            bag = encode_cboi(history, self.embeddings)
            pooled = ad.linear(bag, self.cboi_projection)
            source = pooled
        else:
            states, pooled = encode_recurrent(history, self.embeddings, self.encoder_cell)
            if config.encoder == "RNN_ATT":
                annotations = encode_annotations(history, self.embeddings,
                                                 self.annotation_fwd, self.annotation_bwd)
                source = (states, annotations)
            else:
                source = pooled
        if config.decoder == "FF":
            return decode_ff(source, self.decoder)
        return decode_rnn(source, self.decoder, config.n_components)

    def predict(self, history) -> MixtureParameters:
        """Detached mixture for a single history (no gradient recording)."""
        return self.mixture(np.asarray(history)).detach()

    def predict_batch(self, histories: np.ndarray) -> list[MixtureParameters]:
        """Detached mixtures for a batch of equal-length histories."""
        histories = np.asarray(histories)
        if histories.ndim != 2:
            raise ValueError("predict_batch expects a 2-d index array")
        return self.mixture(histories).detach_rows()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(f"parameter names mismatch: missing={sorted(missing)}, "
                             f"unexpected={sorted(extra)}")
        for name, tensor in params.items():
            if arrays[name].shape != tensor.data.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} does not match "
                                 f"{tensor.data.shape}")
            tensor.data = arrays[name].astype(tensor.data.dtype, copy=True)

    def save(self, path) -> None:
        save_arrays(path, self.state_arrays(), meta={"model": asdict(self.config)})

    @classmethod
    def load(cls, path, embeddings: EmbeddingMatrix) -> "Recommender":
        arrays, meta = load_arrays(path)
        if "model" not in meta:
            raise ValueError(f"{path}: checkpoint carries no model configuration")
        model = cls(ModelConfig(**meta["model"]), embeddings)
        model.load_state_arrays(arrays)
        return model
