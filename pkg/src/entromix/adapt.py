"""Source-free test-time adaptation by entropy minimization.

The adapter freezes every parameter except the affine scale/shift pairs of
the model's normalization layers, switches the model to batch-statistics
mode, and then descends the prediction-entropy objective one small step per
unlabeled batch.  Two stream disciplines are supported: ``online`` carries
the adapted parameters across batches, ``episodic`` restores the pristine
snapshot before every batch.  The adapter never sees labels or training
data; labels enter only the scoring path of :meth:`EntropyAdapter.run_stream`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DomainError
from .layers import Module, NormBase
from .losses import prediction_entropy
from .optim import SGD
from .tensor import Tensor

__all__ = [
    "ADAPT_MODES",
    "BatchRecord",
    "StreamReport",
    "EntropyAdapter",
    "collect_affine_parameters",
]

ADAPT_MODES = ("online", "episodic")


def collect_affine_parameters(model: Module) -> list[tuple[str, Tensor]]:
    """Return the (name, tensor) list of every normalization scale/shift.

    The walk order is the model's deterministic module order, and for each
    normalization layer the scale comes before the shift.  Models without
    any normalization layer cannot be adapted.
    """
    found: list[tuple[str, Tensor]] = []
    for prefix, module in model.named_modules():
        if isinstance(module, NormBase):
            base = f"{prefix}." if prefix else ""
            found.append((f"{base}gamma", module.gamma))
            found.append((f"{base}beta", module.beta))
    if not found:
        raise ConfigError("model has no normalization layers; nothing to adapt")
    return found


@dataclass
class BatchRecord:
    """Per-batch diagnostics captured by the adapter."""

    entropy: float
    predictions: np.ndarray
    flagged: bool
    drift: float
    accuracy: float | None = None


@dataclass
class StreamReport:
    """Append-only record of an adaptation stream, in arrival order."""

    rows: list[BatchRecord] = field(default_factory=list)

    @property
    def entropies(self) -> list[float]:
        return [r.entropy for r in self.rows]

    @property
    def n_flagged(self) -> int:
        return sum(1 for r in self.rows if r.flagged)

    @property
    def final_drift(self) -> float:
        return self.rows[-1].drift if self.rows else 0.0

    def cumulative_accuracy(self) -> float | None:
        """Fraction correct over all scored batches, or None if unscored."""
        total = correct = 0
        for row in self.rows:
            if row.accuracy is None:
                continue
            n = row.predictions.shape[0]
            total += n
            correct += int(round(row.accuracy * n))
        return correct / total if total else None


class EntropyAdapter:
    """Adapt a trained classifier on unlabeled batches.

    Construction freezes the model: every parameter outside the
    normalization affine set loses its gradient flag, batch-statistics mode
    is switched on, and a pristine snapshot of the adaptable tensors is
    taken exactly once.  The adapter owns the model instance from then on.
    """

    def __init__(
        self,
        model: Module,
        lr: float = 1e-3,
        momentum: float = 0.9,
        steps_per_batch: int = 1,
        mode: str = "online",
    ) -> None:
        if mode not in ADAPT_MODES:
            raise ConfigError(f"adaptation mode must be one of {ADAPT_MODES}, got {mode!r}")
        if steps_per_batch < 1:
            raise DomainError(f"steps_per_batch must be >= 1, got {steps_per_batch}")
        self.model = model
        self.mode = mode
        self.steps_per_batch = int(steps_per_batch)

        named = collect_affine_parameters(model)
        self.adaptable_names = [name for name, _ in named]
        self.adaptable = [p for _, p in named]
        adaptable_ids = {id(p) for p in self.adaptable}
        self.frozen = [p for _, p in model.named_parameters() if id(p) not in adaptable_ids]
        for p in self.frozen:
            p.requires_grad = False
        for p in self.adaptable:
            p.requires_grad = True

        self._snapshot = [p.data.copy() for p in self.adaptable]
        self.optimizer = SGD(self.adaptable, lr=lr, momentum=momentum)
        self.model.set_mode("adapt")

    def drift_norm(self) -> float:
        """Euclidean distance of the adaptable set from its snapshot."""
        total = 0.0
        for p, ref in zip(self.adaptable, self._snapshot):
            diff = p.data.astype(np.float64) - ref.astype(np.float64)
            total += float(np.dot(diff.ravel(), diff.ravel()))
        return math.sqrt(total)

    def reset(self) -> None:
        """Restore the pristine affine parameters and clear optimizer state."""
        for p, ref in zip(self.adaptable, self._snapshot):
            np.copyto(p.data, ref)
            p.grad = None
        self.optimizer.reset_state()

    def adapt_batch(self, signals: np.ndarray) -> tuple[np.ndarray, BatchRecord]:
        """Predict on one unlabeled batch, then update the affine parameters.

        Predictions come from the same forward pass whose entropy drives the
        first update step.  A non-finite entropy skips the update, flags the
        batch, and leaves every parameter untouched.
        """
        if self.mode == "episodic":
            self.reset()
        x = Tensor(np.asarray(signals))
        predictions: np.ndarray | None = None
        pre_entropy = math.nan
        flagged = False
        for step in range(self.steps_per_batch):
            try:
                logits = self.model(x)
                entropy = prediction_entropy(logits)
                value = float(entropy.item())
                if step == 0:
                    predictions = np.argmax(logits.numpy(), axis=-1).astype(np.int64)
                    pre_entropy = value
                if not math.isfinite(value):
                    flagged = True
                    T.clear_tape()
                    break
                self.optimizer.zero_grad()
                entropy.backward()
                self.optimizer.step()
            except Exception:
                T.clear_tape()
                raise
        assert predictions is not None
        record = BatchRecord(
            entropy=pre_entropy,
            predictions=predictions,
            flagged=flagged,
            drift=self.drift_norm(),
        )
        return predictions, record

    def run_stream(
        self,
        batches,
        labels=None,
    ) -> StreamReport:
        """Adapt sequentially over a stream of unlabeled batches.

        ``labels``, when given, must parallel ``batches`` and is used only
        to score the predictions after each update; it never reaches the
        adaptation path.  A flagged batch does not halt the stream.
        """
        batch_list = list(batches)
        if not batch_list:
            raise DomainError("adaptation stream must contain at least one batch")
        label_list = None if labels is None else list(labels)
        if label_list is not None and len(label_list) != len(batch_list):
            raise DomainError(
                f"got {len(label_list)} label arrays for {len(batch_list)} batches"
            )
        report = StreamReport()
        for i, signals in enumerate(batch_list):
            predictions, record = self.adapt_batch(signals)
            if label_list is not None:
                truth = np.asarray(label_list[i])
                record.accuracy = float(np.mean(predictions == truth))
            report.rows.append(record)
        return report
