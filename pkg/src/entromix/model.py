"""Trial classifier: multi-scale mixing → patch tokens → transformer → logits.

Pipeline stages, in order:

1. optional multi-scale temporal mixer on the raw (batch, channels, time)
   signal — shape preserving;
2. patch tokenizer: non-overlapping time patches, each patch's
   channels×patch_len values flattened and linearly projected to the
   model width, batch-normalized over features, plus a learned
   positional embedding;
3. a stack of pre-norm transformer blocks (attention + feed-forward);
4. head: mean-pool over tokens, layer norm, linear map to class logits.

When self-distillation is enabled the model also owns one auxiliary
linear head per non-final encoder layer; each maps the mean-pooled
hidden state of its layer to class logits so shallow layers can be
supervised by the final prediction during training. The auxiliary heads
play no role at inference.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import (
    AttentionBlock,
    BatchNorm,
    Dropout,
    FeedForwardBlock,
    LayerNorm,
    Linear,
    Module,
)
from .multiscale import MultiScaleConfig, MultiScaleMixer
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 8
    time_len: int = 128
    patch_len: int = 16
    d_model: int = 64
    n_layers: int = 8
    n_heads: int = 4
    n_classes: int = 10
    mixer: MultiScaleConfig | None = MultiScaleConfig()
    sd_enabled: bool = True
    dropout: float = 0.1

    def __post_init__(self):
        if self.time_len % self.patch_len != 0:
            raise ConfigError(
                f"time length {self.time_len} is not divisible by patch length "
                f"{self.patch_len}"
            )
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"model width {self.d_model} is not divisible by head count "
                f"{self.n_heads}"
            )
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.n_layers < 1:
            raise ConfigError(f"need at least 1 encoder layer, got {self.n_layers}")
        if self.sd_enabled and self.n_layers < 2:
            raise ConfigError(
                "self-distillation needs at least 2 encoder layers: with a "
                "single layer there is no shallower student to supervise"
            )
        if self.mixer is not None:
            self.mixer.level_lengths(self.time_len)  # validates minimum length

    @property
    def n_tokens(self) -> int:
        return self.time_len // self.patch_len


class PatchTokenizer(Module):
    """Non-overlapping patches → linear projection → batch norm → +position."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self._channels = cfg.channels
        self._time_len = cfg.time_len
        self._patch_len = cfg.patch_len
        self._n_tokens = cfg.n_tokens
        self.proj = Linear(cfg.channels * cfg.patch_len, cfg.d_model, rng)
        self.norm = BatchNorm(cfg.d_model)
        pos = rng.normal(0.0, 0.02, size=(cfg.n_tokens, cfg.d_model))
        self.position = Tensor(pos.astype(T.default_dtype()), requires_grad=True)

    def patch_embeddings(self, x: Tensor) -> Tensor:
        """Projected patches before normalization and position offsets.

        Token t sees exactly samples [t·P, (t+1)·P) of every channel.
        """
        if x.ndim != 3 or x.shape[1] != self._channels or x.shape[2] != self._time_len:
            raise ShapeError(
                f"tokenizer expects (batch, {self._channels}, {self._time_len}), "
                f"got {x.shape}"
            )
        batch = x.shape[0]
        # (B, C, T) -> (B, C, L, P) -> (B, L, C, P) -> (B, L, C·P)
        patches = T.transpose(
            T.reshape(x, batch, self._channels, self._n_tokens, self._patch_len),
            (0, 2, 1, 3),
        )
        flat = T.reshape(patches, batch, self._n_tokens, self._channels * self._patch_len)
        return self.proj(flat)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.patch_embeddings(x)) + self.position

    __call__ = forward


class EncoderLayer(Module):
    """One pre-norm transformer block: attention then feed-forward."""

    def __init__(self, d_model: int, n_heads: int, dropout: float, rng):
        self.attn = AttentionBlock(d_model, n_heads, rng, dropout=dropout)
        self.ffn = FeedForwardBlock(d_model, rng, dropout=dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.ffn(self.attn(x))

    __call__ = forward


def _zero_logit_layer(layer: Linear) -> Linear:
    """Start a logit-producing layer at zero.

    The untrained model then predicts the exact uniform distribution
    (maximum entropy) on any input — a clean reference point for the
    entropy-minimizing adaptation — while the first optimizer step
    already breaks the symmetry through the per-sample pooled features.
    """
    layer.weight.data[...] = 0.0
    layer.bias.data[...] = 0.0
    return layer


class ClassifierHead(Module):
    """Mean-pool over tokens, layer norm, linear map to logits."""

    def __init__(self, d_model: int, n_classes: int, rng):
        self.norm = LayerNorm(d_model)
        self.fc = _zero_logit_layer(Linear(d_model, n_classes, rng))

    def forward(self, z: Tensor) -> Tensor:
        return self.fc(self.norm(z.mean(axis=1)))

    __call__ = forward


class TrialClassifier(Module):
    """End-to-end classifier over (batch, channels, time) trials."""

    def __init__(self, cfg: ModelConfig, seed=0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.mixer = (
            MultiScaleMixer(cfg.mixer, cfg.time_len, rng)
            if cfg.mixer is not None
            else None
        )
        self.tokenizer = PatchTokenizer(cfg, rng)
        self.blocks = [
            EncoderLayer(cfg.d_model, cfg.n_heads, cfg.dropout, rng)
            for _ in range(cfg.n_layers)
        ]
        self.head = ClassifierHead(cfg.d_model, cfg.n_classes, rng)
        self.aux_heads = (
            [
                _zero_logit_layer(Linear(cfg.d_model, cfg.n_classes, rng))
                for _ in range(cfg.n_layers - 1)
            ]
            if cfg.sd_enabled
            else []
        )

    def tokenize(self, x: Tensor) -> Tensor:
        z = self.mixer(x) if self.mixer is not None else x
        return self.tokenizer(z)

    def encode(self, tokens: Tensor) -> list[Tensor]:
        """Hidden state after every encoder layer, in depth order."""
        hidden = []
        h = tokens
        for block in self.blocks:
            h = block(h)
            hidden.append(h)
        return hidden

    def forward(self, x: Tensor, with_hidden: bool = False):
        """Class logits; optionally also every layer's hidden state."""
        hidden = self.encode(self.tokenize(x))
        logits = self.head(hidden[-1])
        if with_hidden:
            return logits, hidden
        return logits

    __call__ = forward

    def aux_logits(self, hidden: list[Tensor]) -> list[Tensor]:
        """Per-layer auxiliary logits for the non-final layers.

        Shares the head's mean-pooling but applies each layer's own
        linear head (no layer norm: the heads are throwaway training
        scaffolding and stay as simple as possible).
        """
        if not self.aux_heads:
            raise ConfigError("auxiliary heads are absent; model was built without them")
        return [
            head(z.mean(axis=1)) for head, z in zip(self.aux_heads, hidden[:-1])
        ]
