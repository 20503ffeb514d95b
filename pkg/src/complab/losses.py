"""Cross-entropy, temperature-scaled distillation KL, and their mix."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor, record_op, add, log_softmax, log_softmax_array, mean, mul, pick


@dataclass(frozen=True)
class KDConfig:
    tau: float = 4.0
    alpha: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")


def _labels(labels, batch, classes):
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape != (batch,):
        raise DimensionError(f"expected {batch} labels, got {y.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ContractError(f"labels must lie in [0, {classes})")
    return y


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be [batch, classes], got {logits.shape}")
    y = _labels(labels, *logits.shape)
    return -mean(pick(log_softmax(logits), y))


def kd_kl(teacher_logits, student_logits: Tensor, tau: float) -> Tensor:
    """``tau^2 * mean_b KL(softmax(t/tau) || softmax(s/tau))``.

    The teacher side is a constant: no gradient reaches ``teacher_logits``.
    Differs from the plain soft cross-entropy only by the teacher entropy,
    which does not depend on the student, so the gradients coincide.
    """
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    if t.shape != student_logits.shape:
        raise DimensionError(f"teacher {t.shape} vs student {student_logits.shape}")
    if not tau > 0:
        raise ContractError(f"tau must be positive, got {tau}")
    inv = 1.0 / tau
    log_p = log_softmax_array(t * inv)
    p = np.exp(log_p)
    log_q = log_softmax_array(student_logits.data * inv)
    batch = t.shape[0]
    rows = (p * (log_p - log_q)).sum(axis=1)
    value = tau * tau * max(float(rows.sum()) / batch, 0.0)

    def bw(g):
        return (g * (tau / batch) * (np.exp(log_q) - p),)

    return record_op("kd_kl", np.array(value), (student_logits,), bw)


def kd_kl_per_sample(teacher_logits: np.ndarray, student_logits: np.ndarray, tau: float) -> np.ndarray:
    """Per-row ``tau^2 * KL``; plain arrays, no graph."""
    log_p = log_softmax_array(np.asarray(teacher_logits) * (1.0 / tau))
    log_q = log_softmax_array(np.asarray(student_logits) * (1.0 / tau))
    return tau * tau * (np.exp(log_p) * (log_p - log_q)).sum(axis=1)


def cross_entropy_per_sample(logits: np.ndarray, labels) -> np.ndarray:
    z = np.asarray(logits)
    y = _labels(labels, *z.shape)
    return -log_softmax_array(z)[np.arange(z.shape[0]), y]


def combined_loss(ce, kl, alpha: float):
    """``alpha * ce + (1 - alpha) * kl``; works on Tensors and on floats."""
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha must be in (0, 1], got {alpha}")
    if isinstance(ce, Tensor):
        if alpha == 1.0:
            return ce
        return add(mul(ce, alpha), mul(kl, 1.0 - alpha))
    return alpha * ce + (1.0 - alpha) * kl
