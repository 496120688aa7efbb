"""Parameterized neural layers: linear, normalization, attention, dropout.

Conventions shared by every layer:

* A ``Tensor`` attribute on a module is a trainable parameter; a plain
  ``numpy.ndarray`` attribute is a non-trained buffer (running statistics).
  Attributes whose names start with ``_`` are internal and never enumerated.
  This rule makes parameter enumeration deterministic (dict insertion
  order) and complete, which checkpointing and the adaptation engine
  both rely on.
* Modules carry an execution mode — ``train``, ``infer`` or ``adapt`` —
  set via :meth:`Module.set_mode` and propagated to all children:
  - ``train``: dropout active; batch norm uses current-batch statistics
    and updates its running averages.
  - ``infer``: dropout off; batch norm uses running statistics.
  - ``adapt``: dropout off; batch norm uses current-batch statistics but
    leaves the running averages untouched.
* Layers create their parameters in the default dtype active at
  construction time (see ``tensor.use_dtype``).
"""

import logging

import numpy as np

from . import tensor as T
from .errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor

log = logging.getLogger("entromix.layers")

MODES = ("train", "infer", "adapt")


class Module:
    """Base class providing child/parameter enumeration and mode plumbing."""

    _mode = "train"

    def children(self):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self):
        """Depth-first enumeration of this module and all descendants."""
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_modules(self, prefix=""):
        """Like :meth:`modules`, with dotted paths matching parameter names."""
        yield prefix, self
        for name, child in self.children():
            child_prefix = f"{prefix}.{name}" if prefix else name
            yield from child.named_modules(prefix=child_prefix)

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Tensor):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, np.ndarray):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(prefix=f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def set_mode(self, mode: str):
        if mode not in MODES:
            raise DomainError(f"unknown mode {mode!r}; expected one of {MODES}")
        for m in self.modules():
            m._mode = mode
        return self

    @property
    def mode(self) -> str:
        return self._mode

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _init_linear(rng: np.random.Generator, out_features: int, in_features: int):
    """Uniform(±sqrt(1/in)) for weight and bias, in the active default dtype."""
    bound = float(np.sqrt(1.0 / in_features))
    dt = T.default_dtype()
    w = rng.uniform(-bound, bound, size=(out_features, in_features)).astype(dt)
    b = rng.uniform(-bound, bound, size=(out_features,)).astype(dt)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


class Linear(Module):
    """Affine map x·Wᵀ + b applied to the trailing axis."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self._in_features = int(in_features)
        self._out_features = int(out_features)
        self.weight, self.bias = _init_linear(rng, out_features, in_features)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self._in_features:
            raise ShapeError(
                f"linear layer expects trailing extent {self._in_features}, "
                f"got input shape {x.shape}"
            )
        return x @ T.swapaxes(self.weight, 0, 1) + self.bias

    __call__ = forward


class NormBase(Module):
    """Common surface of both normalization kinds.

    The adaptation engine treats ``gamma``/``beta`` of every instance of
    this class as its complete update surface, so any new normalization
    layer must subclass it.
    """

    kind = "none"

    def __init__(self, num_features: int, eps: float = 1e-5):
        self._num_features = int(num_features)
        self._eps = float(eps)
        dt = T.default_dtype()
        self.gamma = Tensor(np.ones(num_features, dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dt), requires_grad=True)

    def _check_features(self, x: Tensor) -> None:
        if x.shape[-1] != self._num_features:
            raise ShapeError(
                f"{self.kind} expects trailing extent {self._num_features}, "
                f"got input shape {x.shape}"
            )


class LayerNorm(NormBase):
    """Per-sample normalization over the feature (trailing) axis.

    Statistics are recomputed from each sample in every mode, so the
    execution mode changes nothing here.
    """

    kind = "layer_norm"

    def forward(self, x: Tensor) -> Tensor:
        self._check_features(x)
        return T.normalize(x, eps=self._eps) * self.gamma + self.beta

    __call__ = forward


class BatchNorm(NormBase):
    """Per-feature normalization over all leading axes.

    ``train`` normalizes with current-batch statistics and folds them
    into the running averages (momentum ``momentum``); ``infer`` uses the
    running averages as constants; ``adapt`` uses current-batch
    statistics without touching the running averages — the statistic
    replacement step of test-time adaptation. Population (biased)
    variance is used both for normalization and for the running average.
    """

    kind = "batch_norm"

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__(num_features, eps=eps)
        self._momentum = float(momentum)
        self._warned_single_row = False
        dt = T.default_dtype()
        self.running_mean = np.zeros(num_features, dtype=dt)
        self.running_var = np.ones(num_features, dtype=dt)

    def forward(self, x: Tensor) -> Tensor:
        self._check_features(x)
        if self._mode == "infer":
            mean = Tensor(self.running_mean.astype(x.dtype, copy=False))
            inv = Tensor(
                (1.0 / np.sqrt(self.running_var + self._eps)).astype(x.dtype, copy=False)
            )
            return (x - mean) * inv * self.gamma + self.beta

        feat = self._num_features
        rows = x.size // feat
        if rows == 1 and not self._warned_single_row:
            self._warned_single_row = True
            log.warning(
                "batch_norm computed statistics from a single sample row; "
                "variance is eps-dominated and statistically weak"
            )
        if self._mode == "train":
            flat = x.data.reshape(rows, feat)
            m = self._momentum
            self.running_mean += m * (flat.mean(axis=0) - self.running_mean)
            self.running_var += m * (flat.var(axis=0) - self.running_var)

        shape = x.shape
        x2 = T.reshape(x, rows, feat)
        xhat = T.swapaxes(T.normalize(T.swapaxes(x2, 0, 1), eps=self._eps), 0, 1)
        return T.reshape(xhat, *shape) * self.gamma + self.beta

    __call__ = forward


class Dropout(Module):
    """Inverted-scaling dropout; active only in ``train`` mode."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
        self._rate = float(rate)
        self._rng = rng

    def forward(self, x: Tensor) -> Tensor:
        if self._mode != "train" or self._rate == 0.0:
            return x
        keep = 1.0 - self._rate
        mask = (self._rng.random(x.shape) < keep).astype(x.numpy().dtype) / keep
        return x * Tensor(mask)

    __call__ = forward


class AttentionBlock(Module):
    """Pre-norm residual multi-head self-attention: x + MHA(LN(x)).

    Heads split the model width evenly; attention weights are a softmax
    over the key axis with 1/sqrt(head_dim) scaling. Dropout acts on the
    block output before the residual sum.
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
    ):
        if d_model % n_heads != 0:
            raise ConfigError(
                f"model width {d_model} is not divisible by head count {n_heads}"
            )
        self._d_model = int(d_model)
        self._n_heads = int(n_heads)
        self._head_dim = d_model // n_heads
        self.norm = LayerNorm(d_model)
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)
        self.drop = Dropout(dropout, rng)

    def _split_heads(self, x: Tensor, batch: int, length: int) -> Tensor:
        # (B, L, D) -> (B, H, L, head_dim)
        return T.transpose(
            T.reshape(x, batch, length, self._n_heads, self._head_dim), (0, 2, 1, 3)
        )

    def forward(self, x: Tensor, return_weights: bool = False):
        if x.ndim != 3 or x.shape[-1] != self._d_model:
            raise ShapeError(
                f"attention expects (batch, tokens, {self._d_model}), got {x.shape}"
            )
        batch, length, _ = x.shape
        h = self.norm(x)
        q = self._split_heads(self.q_proj(h), batch, length)
        k = self._split_heads(self.k_proj(h), batch, length)
        v = self._split_heads(self.v_proj(h), batch, length)

        scale = 1.0 / float(np.sqrt(self._head_dim))
        scores = (q * scale) @ T.swapaxes(k, 2, 3)  # (B, H, L, L)
        weights = T.softmax(scores, axis=-1)
        mixed = weights @ v  # (B, H, L, head_dim)
        merged = T.reshape(
            T.transpose(mixed, (0, 2, 1, 3)), batch, length, self._d_model
        )
        out = x + self.drop(self.out_proj(merged))
        if return_weights:
            return out, weights
        return out

    __call__ = forward


class FeedForwardBlock(Module):
    """Pre-norm residual two-layer feed-forward: x + FFN(LN(x)).

    Hidden width is ``expansion`` times the model width with a GELU
    between the projections; dropout acts on the output before the
    residual sum.
    """

    def __init__(
        self,
        d_model: int,
        rng: np.random.Generator,
        expansion: int = 4,
        dropout: float = 0.0,
    ):
        self.norm = LayerNorm(d_model)
        self.up = Linear(d_model, expansion * d_model, rng)
        self.down = Linear(expansion * d_model, d_model, rng)
        self.drop = Dropout(dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.drop(self.down(T.gelu(self.up(self.norm(x)))))

    __call__ = forward
