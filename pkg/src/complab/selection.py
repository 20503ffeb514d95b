"""Teacher-filtered augmentation selection for distillation.

For each training sample, ``n`` RandAugment views with random magnitudes are
scored by ``alpha * CE(teacher(x_i), y) - beta * KL(teacher(x_i), student(x_i))``
and the lowest-scoring view is used for the student update: views the
teacher gets right but the student disagrees on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import random_magnitude_augment, sample_rng
from .errors import ConfigError
from .losses import cross_entropy_per_sample, kd_kl_per_sample
from .models import preprocess
from .tensor import no_grad
from .training import AUG_STREAM

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SelectionConfig:
    n: int = 4
    alpha: float = 1.0
    beta: float = 1.0
    tau: float = 4.0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("selection needs n >= 1 candidates")
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ConfigError("alpha and beta must be non-negative and not both zero")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")


def generate_candidates(img: np.ndarray, n: int, rng: np.random.Generator) -> list:
    """``n`` independent random-magnitude RandAugment views: ``[(image, magnitude), ...]``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    return [random_magnitude_augment(img, rng) for _ in range(n)]


def candidate_scores(teacher_logits, student_logits, labels, cfg: SelectionConfig):
    """Scores and the per-candidate tie tolerance scale (``|alpha*CE| + |beta*KL|``)."""
    ce = cross_entropy_per_sample(teacher_logits, labels)
    kl = kd_kl_per_sample(teacher_logits, student_logits, cfg.tau)
    a, b = cfg.alpha * ce, cfg.beta * kl
    return a - b, np.abs(a) + np.abs(b)


def argmin_with_ties(scores, scale) -> int:
    """Lowest index whose score is within ``TIE_RTOL`` (relative) of the minimum.

    The relative tolerance makes the choice invariant to rescaling alpha and
    beta jointly, where rounding alone could reorder near-equal scores.
    """
    scores = np.asarray(scores)
    tol = TIE_RTOL * float(np.max(scale)) if len(scale) else 0.0
    best = scores.min()
    return int(np.flatnonzero(scores <= best + tol)[0])


def select(candidates, label: int, teacher, student, cfg: SelectionConfig):
    """Pick one candidate image; returns ``(index, scores)``. No graph is recorded."""
    if len(candidates) == 0:
        raise ConfigError("no candidates to select from")
    x = preprocess(np.stack(candidates))
    with no_grad():
        t = teacher(x).data
        s = student(x).data
    scores, scale = candidate_scores(t, s, np.full(len(candidates), label), cfg)
    return argmin_with_ties(scores, scale), scores


def select_batch(images, labels, indices, teacher, student, cfg: SelectionConfig, *,
                 seed: int, stage: int, epoch: int):
    """Select one view per sample for a whole batch, scoring all ``B * n`` views at once.

    Returns ``(chosen_images, chosen_magnitudes, trace_rows)``.
    """
    B, n = len(labels), cfg.n
    views = np.empty((B * n,) + images.shape[1:], dtype=np.uint8)
    mags = np.empty(B * n, dtype=np.int64)
    for j, i in enumerate(indices):
        # same stream as plain random-magnitude augmentation, so n=1 reproduces it exactly
        rng = sample_rng(seed, AUG_STREAM, stage, epoch, i)
        for c, (img, m) in enumerate(generate_candidates(images[j], n, rng)):
            views[j * n + c] = img
            mags[j * n + c] = m
    if n == 1:
        return views, mags.tolist(), [(epoch, int(i), int(mags[j]), 0.0, 0.0) for j, i in enumerate(indices)]
    x = preprocess(views)
    with no_grad():
        t = teacher(x).data
        s = student(x).data
    scores, scale = candidate_scores(t, s, np.repeat(labels, n), cfg)
    scores, scale = scores.reshape(B, n), scale.reshape(B, n)
    chosen = np.array([argmin_with_ties(scores[j], scale[j]) for j in range(B)])
    pick = np.arange(B) * n + chosen
    trace = [(epoch, int(i), int(mags[pick[j]]), float(scores[j, chosen[j]]), float(scores[j].mean()))
             for j, i in enumerate(indices)]
    return views[pick], mags[pick].tolist(), trace


def distill_with_selection(student, teacher, data, sel_cfg: SelectionConfig, kd_cfg, train_spec,
                           *, stage: int = 0, record=None):
    """Train ``student`` by distillation on teacher-selected views; returns ``(student, record)``."""
    from dataclasses import replace

    from .training import AugSpec, LossSpec, train_stage

    spec = replace(train_spec, aug=AugSpec("selection", selection=sel_cfg), loss=LossSpec("kd", kd_cfg))
    record = train_stage(student, data, spec, teacher=teacher, stage=stage, record=record)
    return student, record
