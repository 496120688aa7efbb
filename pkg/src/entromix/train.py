"""Training, evaluation, adaptation streams, and the four-arm ablation.

Everything here is deterministic given (config, seed): batch order comes
from per-epoch seeded generators, streams are built from per-seed seeded
generators, and the synthetic data itself is seed-addressed per trial.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .adapt import EntropyAdapter, StreamReport
from .config import ExperimentConfig
from .data import TrialDataset, apply_shift, generate, read_trials, split
from .errors import TrainingDiverged
from .losses import training_loss
from .metrics import RunMetrics, SeedResult, StructuredLog
from .model import TrialClassifier
from .optim import AdamW
from .tensor import Tensor

__all__ = [
    "ARM_NAMES",
    "TrainHistory",
    "load_dataset",
    "make_splits",
    "train_model",
    "evaluate",
    "build_stream",
    "frozen_stream_accuracy",
    "run_adaptation",
    "run_ablation",
]

# Ablation ladder, weakest to strongest.
ARM_NAMES = ("baseline", "sd", "sd_mdm", "sd_mdm_tent")

# Stream seeds are decorrelated from epoch seeds by fixed salts.
_STREAM_ORDER_SALT = 0x07DE5
_STREAM_NOISE_SALT = 0x5417F


@dataclass
class TrainHistory:
    """Per-epoch training diagnostics and the best-validation epoch."""

    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = -1.0

    def append(self, row: dict) -> None:
        self.epochs.append(row)


def load_dataset(config: ExperimentConfig) -> TrialDataset:
    """Read the configured trial file, or synthesize the desk dataset."""
    path = config.get("data.path")
    if path:
        return read_trials(path)
    return generate(config.synth_spec(), config.get("data.n_trials"))


def make_splits(config: ExperimentConfig) -> tuple[TrialDataset, TrialDataset, TrialDataset]:
    """Stratified train/val/test split, fixed by the data seed.

    The split does not vary with the run seed, so different seeds attack
    the same task with different initializations and batch orders.
    """
    dataset = load_dataset(config)
    return split(dataset, config.split_fractions(), seed=config.get("data.seed"))


def evaluate(
    model: TrialClassifier, dataset: TrialDataset, batch_size: int = 64
) -> tuple[float, np.ndarray]:
    """Frozen-inference accuracy and confusion matrix over a dataset."""
    model.set_mode("infer")
    k = model.cfg.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    with T.no_grad():
        for batch in dataset.batches(batch_size):
            logits = model(Tensor(batch.signals)).numpy()
            preds = np.argmax(logits, axis=-1)
            for true, pred in zip(batch.labels, preds):
                confusion[true, pred] += 1
    total = confusion.sum()
    accuracy = float(confusion.trace() / total) if total else math.nan
    return accuracy, confusion


def _snapshot_tensors(model: TrialClassifier) -> dict[str, np.ndarray]:
    state = {name: p.data.copy() for name, p in model.named_parameters()}
    state.update({name: b.copy() for name, b in model.named_buffers()})
    return state


def _restore_tensors(model: TrialClassifier, state: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        np.copyto(p.data, state[name])
    for name, b in model.named_buffers():
        np.copyto(b, state[name])


def train_model(
    config: ExperimentConfig,
    seed: int,
    log: StructuredLog | None = None,
) -> tuple[TrialClassifier, TrainHistory]:
    """Train one model; returns it restored to its best-validation state.

    A non-finite loss aborts with the index of the last epoch that
    completed with finite losses.
    """
    train_set, val_set, _ = make_splits(config)
    model = TrialClassifier(config.model_config(), seed=seed)
    optimizer = AdamW(
        model.parameters(),
        lr=config.get("optim.lr"),
        weight_decay=config.get("optim.weight_decay"),
    )
    sd_weight = config.get("sd.weight") if config.get("sd.enabled") else 0.0
    sd_temperature = config.get("sd.temperature")
    batch_size = config.get("optim.batch_size")
    history = TrainHistory()
    best_state: dict[str, np.ndarray] | None = None

    for epoch in range(config.get("optim.epochs")):
        model.set_mode("train")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))
        ce_sum = sd_sum = loss_sum = 0.0
        n_batches = 0
        for batch in train_set.batches(batch_size, rng):
            breakdown = training_loss(
                model,
                Tensor(batch.signals),
                batch.labels,
                sd_weight=sd_weight,
                sd_temperature=sd_temperature,
            )
            total_value = float(breakdown.total.item())
            if not math.isfinite(total_value):
                T.clear_tape()
                raise TrainingDiverged(
                    f"non-finite loss in epoch {epoch}", last_good_epoch=epoch - 1
                )
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            ce_sum += breakdown.ce
            sd_sum += breakdown.sd
            loss_sum += total_value
            n_batches += 1
        val_accuracy, _ = evaluate(model, val_set, batch_size)
        row = {
            "epoch": epoch,
            "loss": loss_sum / max(n_batches, 1),
            "ce": ce_sum / max(n_batches, 1),
            "sd": sd_sum / max(n_batches, 1),
            "val_accuracy": val_accuracy,
        }
        history.append(row)
        if log is not None:
            log.emit("epoch", seed=seed, **row)
        if val_accuracy > history.best_val_accuracy:
            history.best_val_accuracy = val_accuracy
            history.best_epoch = epoch
            best_state = _snapshot_tensors(model)

    if best_state is not None:
        _restore_tensors(model, best_state)
    model.set_mode("infer")
    return model, history


def build_stream(
    dataset: TrialDataset,
    config: ExperimentConfig,
    seed: int,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Shuffle a dataset into a shifted stream of (signals, labels) batches.

    The trial order and the shift noise each draw from their own seeded
    generator, so the same seed always produces the identical stream.
    """
    shift = config.shift_spec()
    batch_size = config.get("tent.batch_size")
    order_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, _STREAM_ORDER_SALT]))
    )
    noise_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, _STREAM_NOISE_SALT]))
    )
    batches = list(dataset.batches(batch_size, order_rng))
    total = len(batches)
    signals: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for position, batch in enumerate(batches):
        shifted = apply_shift(batch, shift, position, total, noise_rng)
        signals.append(shifted.signals)
        labels.append(shifted.labels)
    return signals, labels


def frozen_stream_accuracy(
    model: TrialClassifier, signals: list[np.ndarray], labels: list[np.ndarray]
) -> float:
    """Accuracy of the unadapted model over a prepared stream."""
    model.set_mode("infer")
    correct = total = 0
    with T.no_grad():
        for x, y in zip(signals, labels):
            preds = np.argmax(model(Tensor(x)).numpy(), axis=-1)
            correct += int((preds == y).sum())
            total += len(y)
    return correct / total if total else math.nan


def run_adaptation(
    model: TrialClassifier,
    config: ExperimentConfig,
    signals: list[np.ndarray],
    labels: list[np.ndarray],
) -> tuple[float, float, StreamReport]:
    """Score the frozen model, then adapt it over the identical stream.

    Returns (frozen accuracy, adapted accuracy, stream report).  The model
    instance is adapted in place; reload it if pristine weights are needed
    afterwards.
    """
    frozen = frozen_stream_accuracy(model, signals, labels)
    adapter = EntropyAdapter(
        model,
        lr=config.get("tent.lr"),
        momentum=config.get("tent.momentum"),
        steps_per_batch=config.get("tent.steps"),
        mode=config.get("tent.mode"),
    )
    report = adapter.run_stream(signals, labels)
    adapted = report.cumulative_accuracy()
    assert adapted is not None
    return frozen, adapted, report


def _arm_config(base: ExperimentConfig, arm: str) -> ExperimentConfig:
    if arm == "baseline":
        return base.replace(mdm__enabled=False, sd__enabled=False, tent__enabled=False)
    if arm == "sd":
        return base.replace(mdm__enabled=False, sd__enabled=True, tent__enabled=False)
    if arm == "sd_mdm":
        return base.replace(mdm__enabled=True, sd__enabled=True, tent__enabled=False)
    if arm == "sd_mdm_tent":
        return base.replace(mdm__enabled=True, sd__enabled=True, tent__enabled=True)
    raise ValueError(f"unknown arm {arm!r}")


def run_ablation(
    config: ExperimentConfig,
    log: StructuredLog | None = None,
) -> tuple[RunMetrics, StreamReport | None]:
    """Run the four-arm ladder over all configured seeds.

    Per seed, three models are trained (baseline, +SD, +SD+MDM); the full
    arm reuses the +SD+MDM model and adapts it over the shifted stream all
    arms are scored on.  A failed arm is marked and the rest proceed.
    """
    metrics = RunMetrics(config_hash=config.config_hash())
    last_report: StreamReport | None = None
    _, _, test_set = make_splits(config)
    for seed in config.seeds():
        stream_signals, stream_labels = build_stream(test_set, config, seed)
        sd_mdm_model: TrialClassifier | None = None
        for arm in ARM_NAMES:
            start = time.perf_counter()
            try:
                if arm == "sd_mdm_tent":
                    if sd_mdm_model is None:
                        raise TrainingDiverged(
                            "tent arm skipped: its backbone arm failed", last_good_epoch=-1
                        )
                    arm_cfg = _arm_config(config, arm)
                    _, accuracy, report = run_adaptation(
                        sd_mdm_model, arm_cfg, stream_signals, stream_labels
                    )
                    last_report = report
                else:
                    arm_cfg = _arm_config(config, arm)
                    model, _ = train_model(arm_cfg, seed, log)
                    accuracy = frozen_stream_accuracy(model, stream_signals, stream_labels)
                    if arm == "sd_mdm":
                        sd_mdm_model = model
                status = "ok"
            except Exception as exc:  # a failed arm must not sink the table
                accuracy = math.nan
                status = f"failed: {type(exc).__name__}"
                if log is not None:
                    log.emit("arm_failed", arm=arm, seed=seed, error=str(exc))
            elapsed = time.perf_counter() - start
            metrics.add(SeedResult(arm, seed, accuracy, elapsed, status))
            if log is not None and status == "ok":
                log.emit("arm_result", arm=arm, seed=seed, accuracy=accuracy, wall_clock_s=elapsed)
    return metrics, last_report
