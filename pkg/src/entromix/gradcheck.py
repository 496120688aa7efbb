"""Finite-difference verification of every differentiable path.

The checker builds a tiny 64-bit model, randomizes all parameters (the
logit layers start at zero, which would otherwise leave whole subgraphs
with vanishing gradients), computes analytic gradients of the full
training objective once, and then compares each parameter entry against a
central finite difference.  The model runs in batch-statistics mode so the
objective is a pure function of the parameters — no running-statistic or
dropout state changes between evaluations.

The relative error reported per entry is |analytic - numeric| divided by
max(1, |numeric|), so near-zero gradients are judged on absolute error.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ExperimentConfig
from .losses import cross_entropy, self_distillation_loss
from .model import TrialClassifier
from .multiscale import MultiScaleConfig, MultiScaleMixer
from .tensor import Tensor

__all__ = ["GradCheckReport", "tiny_config", "run_model_gradcheck", "run_mixer_gradcheck"]

_PERTURB_SALT = 0x6AD11


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference sweep."""

    name: str
    tolerance: float
    max_rel_error: float = 0.0
    worst_tensor: str = ""
    n_entries: int = 0
    runtime_s: float = 0.0
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def offenders(self) -> list[tuple[str, float]]:
        return sorted(
            ((n, e) for n, e in self.per_tensor.items() if e >= self.tolerance),
            key=lambda item: item[1],
            reverse=True,
        )

    def summary_lines(self) -> list[str]:
        verdict = "PASS" if self.passed else "FAIL"
        lines = [
            f"[{verdict}] {self.name}: max relative error {self.max_rel_error:.3e} "
            f"(tolerance {self.tolerance:.1e}) over {self.n_entries} entries "
            f"in {self.runtime_s:.1f}s; worst tensor: {self.worst_tensor}"
        ]
        for tensor_name, err in self.offenders():
            lines.append(f"    above tolerance: {tensor_name} -> {err:.3e}")
        return lines


def tiny_config() -> ExperimentConfig:
    """The smallest architecture that still exercises every module."""
    return ExperimentConfig(
        {
            "model.channels": 2,
            "model.time_len": 16,
            "model.patch_len": 4,
            "model.d_model": 8,
            "model.n_layers": 2,
            "model.n_heads": 2,
            "model.n_classes": 3,
            "model.dropout": 0.0,
            "mdm.enabled": True,
            "mdm.levels": 2,
            "mdm.pool_kernel": 2,
            "mdm.rank": 2,
            "sd.enabled": True,
        }
    )


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


def _sweep(named_params, loss_value_fn, loss_graph_fn, step: float, name: str, tolerance: float) -> GradCheckReport:
    """Analytic-vs-central-difference comparison over every parameter entry."""
    start = time.perf_counter()
    report = GradCheckReport(name=name, tolerance=tolerance)

    for p in (p for _, p in named_params):
        p.grad = None
    loss = loss_graph_fn()
    loss.backward()
    analytic = {pname: np.array(p.grad, dtype=np.float64) for pname, p in named_params}

    for pname, p in named_params:
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.shape[0], dtype=np.float64)
        for i in range(flat.shape[0]):
            original = flat[i]
            flat[i] = original + step
            upper = loss_value_fn()
            flat[i] = original - step
            lower = loss_value_fn()
            flat[i] = original
            numeric[i] = (upper - lower) / (2.0 * step)
        errors = _rel_error(analytic[pname].reshape(-1), numeric)
        worst = float(errors.max()) if errors.size else 0.0
        report.per_tensor[pname] = worst
        report.n_entries += int(errors.size)
        if worst > report.max_rel_error:
            report.max_rel_error = worst
            report.worst_tensor = pname
    report.runtime_s = time.perf_counter() - start
    return report


def run_model_gradcheck(
    config: ExperimentConfig | None = None,
    tolerance: float = 1e-3,
    step: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Check the full training objective of the tiny model, in 64-bit."""
    config = config if config is not None else tiny_config()
    with T.use_dtype(np.float64):
        model = TrialClassifier(config.model_config(), seed=seed)
    model.set_mode("adapt")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _PERTURB_SALT])))
    named = list(model.named_parameters())
    # Shake every parameter off its initialization; the logit layers start
    # at exactly zero and would otherwise hide the paths feeding them.
    for _, p in named:
        p.data += 0.2 * rng.standard_normal(p.data.shape)

    cfg = model.cfg
    x = Tensor(rng.standard_normal((3, cfg.channels, cfg.time_len)))
    labels = rng.integers(0, cfg.n_classes, size=3)
    sd_weight = config.get("sd.weight") if config.get("sd.enabled") else 0.0
    sd_temperature = config.get("sd.temperature")

    # The distillation teacher carries a stop-gradient, which finite
    # differences cannot represent; pin it to the unperturbed prediction so
    # analytic and numeric sides differentiate the same function.
    teacher0 = None
    if sd_weight != 0.0:
        with T.no_grad():
            scaled = model(x).numpy() / sd_temperature
        scaled -= scaled.max(axis=-1, keepdims=True)
        exp = np.exp(scaled)
        teacher0 = exp / exp.sum(axis=-1, keepdims=True)

    def build_loss() -> Tensor:
        if sd_weight == 0.0:
            return cross_entropy(model(x), labels)
        final, hidden = model(x, with_hidden=True)
        ce = cross_entropy(final, labels)
        sd = self_distillation_loss(
            final, model.aux_logits(hidden), sd_temperature, teacher_probs=teacher0
        )
        return ce + sd * sd_weight

    def loss_value() -> float:
        with T.no_grad():
            return float(build_loss().item())

    return _sweep(named, loss_value, build_loss, step, "full-model objective", tolerance)


def run_mixer_gradcheck(
    tolerance: float = 1e-3,
    step: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Check the multi-scale mixer in isolation from the backbone."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _PERTURB_SALT, 1])))
    with T.use_dtype(np.float64):
        mixer = MultiScaleMixer(MultiScaleConfig(levels=3, pool_kernel=2, rank=2), 16, rng)
    named = list(mixer.named_parameters())
    for _, p in named:
        p.data += 0.2 * rng.standard_normal(p.data.shape)
    x = Tensor(rng.standard_normal((2, 2, 16)))
    w = Tensor(rng.standard_normal((2, 2, 16)))

    def loss_graph():
        return T.tensor_sum(mixer(x) * w)

    def loss_value() -> float:
        with T.no_grad():
            return float(T.tensor_sum(mixer(x) * w).item())

    return _sweep(named, loss_value, loss_graph, step, "multi-scale mixer subgraph", tolerance)
