"""Training and adaptation objectives.

* cross-entropy over class logits (supervised training);
* mean Shannon entropy of the predictive distribution (the quantity
  minimized during test-time adaptation — computed from logits, in nats);
* layer-wise self-distillation: the final prediction, softened by a
  temperature, supervises every non-final layer's auxiliary prediction
  through a KL term. No gradient flows into the teacher.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DomainError
from .tensor import Tensor

# probabilities are clamped here before any log so 0·log 0 contributes 0
PROB_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    """Total training objective plus its logged components.

    ``total`` stays a graph tensor so callers can backpropagate;
    ``ce``/``sd`` are detached floats for metrics.
    """

    total: Tensor
    ce: float
    sd: float
    sd_weight: float
    sd_temperature: float


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DomainError(f"labels must be a 1-d integer array, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DomainError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels.astype(np.int64)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true classes.

    Computed through a max-subtracted log-softmax, so arbitrarily large
    logits stay finite.
    """
    labels = _check_labels(labels, logits.shape[-1])
    log_probs = T.log_softmax(logits)
    picked = T.take_along_last(log_probs, labels)
    return -T.tensor_mean(picked)


def prediction_entropy(logits: Tensor) -> Tensor:
    """Mean Shannon entropy (nats) of softmax(logits) over the batch."""
    if logits.shape[-1] < 2:
        raise DomainError("entropy needs at least 2 classes")
    probs = T.softmax(logits)
    plogp = probs * T.log(T.clamp_min(probs, PROB_FLOOR))
    return -T.tensor_mean(T.tensor_sum(plogp, axis=-1))


def self_distillation_loss(
    final_logits: Tensor,
    aux_logits: list[Tensor],
    temperature: float = 4.0,
    teacher_probs: np.ndarray | None = None,
) -> Tensor:
    """Mean softened KL from the final prediction to each shallow head.

    KL(teacher ∥ student) per layer, teacher = softmax(final/τ) treated
    as a constant, student = softmax(aux/τ); the usual τ² factor keeps
    gradient magnitudes comparable across temperatures.

    ``teacher_probs`` substitutes an explicit constant teacher
    distribution.  Finite-difference checks need this: numeric
    differentiation cannot see the stop-gradient on the teacher, so the
    comparison is only valid with the teacher pinned.
    """
    if not aux_logits:
        raise ConfigError(
            "self-distillation needs at least one shallower layer to teach"
        )
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")

    # constants are built in the logits' dtype so a float64 graph is not
    # polluted by float32 scalar wrapping
    dt = final_logits.dtype
    inv_t = Tensor(np.asarray(1.0 / float(temperature), dtype=dt))
    if teacher_probs is not None:
        teacher = np.asarray(teacher_probs, dtype=dt)
        if teacher.shape != final_logits.shape:
            raise DomainError(
                f"teacher_probs shape {teacher.shape} != logits shape {final_logits.shape}"
            )
    else:
        with T.no_grad():
            teacher = T.softmax(final_logits.detach() * inv_t).numpy()
    teacher_logp = np.log(np.clip(teacher, PROB_FLOOR, None))
    # Σ t·log t, a constant w.r.t. every trainable tensor
    teacher_term = Tensor(np.asarray((teacher * teacher_logp).sum(axis=-1).mean(), dtype=dt))
    teacher_const = Tensor(teacher.astype(dt, copy=False))

    total = None
    for aux in aux_logits:
        student_logp = T.log_softmax(aux * inv_t)
        cross = T.tensor_mean(T.tensor_sum(teacher_const * student_logp, axis=-1))
        kl = teacher_term - cross
        total = kl if total is None else total + kl
    scale = Tensor(np.asarray(float(temperature) ** 2 / len(aux_logits), dtype=dt))
    return total * scale


def training_loss(
    model,
    signals: Tensor,
    labels,
    sd_weight: float = 0.1,
    sd_temperature: float = 4.0,
) -> LossBreakdown:
    """Cross-entropy plus the weighted self-distillation regularizer.

    The distillation term is skipped entirely (reported as 0) when the
    model has no auxiliary heads or the weight is 0, making those two
    configurations produce identical losses step for step.
    """
    use_sd = bool(model.cfg.sd_enabled) and sd_weight != 0.0
    if use_sd:
        logits, hidden = model(signals, with_hidden=True)
    else:
        logits = model(signals)

    ce = cross_entropy(logits, labels)
    if not use_sd:
        return LossBreakdown(
            total=ce, ce=ce.item(), sd=0.0, sd_weight=sd_weight, sd_temperature=sd_temperature
        )

    sd = self_distillation_loss(logits, model.aux_logits(hidden), sd_temperature)
    total = ce + sd * float(sd_weight)
    return LossBreakdown(
        total=total,
        ce=ce.item(),
        sd=sd.item(),
        sd_weight=sd_weight,
        sd_temperature=sd_temperature,
    )
