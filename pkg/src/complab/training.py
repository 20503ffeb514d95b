"""One training stage: augmentation, loss, SGD with masks, per-epoch metrics."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugPolicy, check_magnitude, randaugment, random_magnitude_augment, sample_rng
from .errors import ConfigError
from .losses import KDConfig, combined_loss, cross_entropy, kd_kl
from .models import preprocess
from .optim import SGD
from .tensor import backward, no_grad

AUG_KINDS = ("none", "fixed", "random", "decay", "selection")

# rng stream domains
_PERM, AUG_STREAM = 0, 1


@dataclass(frozen=True)
class AugSpec:
    kind: str = "none"
    magnitude: int | None = None
    schedule: object = None  # policy.DecaySchedule
    selection: object = None  # selection.SelectionConfig

    def __post_init__(self):
        if self.kind not in AUG_KINDS:
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")
        if self.kind == "fixed":
            check_magnitude(self.magnitude)
        if self.kind == "decay" and self.schedule is None:
            raise ConfigError("decay augmentation needs a schedule")
        if self.kind == "selection" and self.selection is None:
            raise ConfigError("selection augmentation needs a SelectionConfig")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ce"
    kd: KDConfig | None = None

    def __post_init__(self):
        if self.kind not in ("ce", "kd"):
            raise ConfigError(f"unknown loss {self.kind!r}")
        if self.kind == "kd" and self.kd is None:
            raise ConfigError("kd loss needs a KDConfig")


@dataclass(frozen=True)
class TrainSpec:
    epochs: int
    batch_size: int
    lr: float
    momentum: float
    aug: AugSpec
    loss: LossSpec
    seed: int
    head_seed: int | None = None  # re-initialised classifier head after detaching extra blocks

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.lr > 0 or not 0 <= self.momentum < 1:
            raise ConfigError(f"bad optimiser settings lr={self.lr} momentum={self.momentum}")


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    stage: int
    train_loss: float
    val_accuracy: float
    val_loss: float
    pruning_ratio: float
    magnitude: float
    wall_time: float


@dataclass
class RunRecord:
    """Per-epoch metrics of one run, plus run-level metadata used in summaries."""

    name: str
    scheme: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    magnitude_log: dict = field(default_factory=dict)
    selection_trace: list = field(default_factory=list)

    def append(self, row: EpochRow):
        if self.rows and (row.stage, row.epoch) <= (self.rows[-1].stage, self.rows[-1].epoch):
            raise ConfigError(f"record rows out of order at stage {row.stage} epoch {row.epoch}")
        self.rows.append(row)

    def extend(self, other: "RunRecord"):
        for r in other.rows:
            self.append(r)
        self.selection_trace.extend(other.selection_trace)
        for k, v in other.magnitude_log.items():
            self.magnitude_log[k] = v

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].val_accuracy

    def write_selection_trace(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["epoch", "sample_index", "chosen_magnitude", "score_chosen", "score_mean"])
            for r in self.selection_trace:
                wr.writerow([r[0], r[1], r[2], repr(r[3]), repr(r[4])])


def evaluate(model, images, labels, batch_size: int = 500) -> tuple[float, float]:
    """Clean (un-augmented) accuracy and mean cross-entropy."""
    from .losses import cross_entropy_per_sample

    n = len(labels)
    correct, loss = 0, 0.0
    with no_grad():
        for k in range(0, n, batch_size):
            logits = model(preprocess(images[k:k + batch_size])).data
            y = labels[k:k + batch_size]
            correct += int((logits.argmax(axis=1) == y).sum())
            loss += float(cross_entropy_per_sample(logits, y).sum())
    return correct / n, loss / n


def _magnitude_for(aug: AugSpec, mask):
    if aug.kind == "fixed":
        return aug.magnitude
    if aug.kind == "decay":
        from .policy import decay_lookup
        # the target ratio, not the achieved one: floor quotas land just below pivots
        return decay_lookup(aug.schedule, mask.target_ratio if mask is not None else 0.0)
    return None


def train_stage(model, data, spec: TrainSpec, *, mask=None, teacher=None, stage: int = 0,
                record: RunRecord | None = None) -> RunRecord:
    """Train ``model`` in place on ``data.train`` and evaluate on ``data.val`` after each epoch.

    Every sample's augmentation uses its own generator derived from
    ``(spec.seed, stage, epoch, sample_index)``, so results do not depend on
    batch composition.
    """
    from .pruning import pruning_ratio

    if record is None:
        record = RunRecord("run", seed=spec.seed)
    aug = spec.aug
    if (spec.loss.kind == "kd" or aug.kind == "selection") and teacher is None:
        raise ConfigError("distillation and selection need a teacher model")
    images, labels = data.train.images, data.train.labels
    n = len(labels)
    opt = SGD(model.params, spec.lr, spec.momentum)
    fixed_m = _magnitude_for(aug, mask)
    ratio = pruning_ratio(mask) if mask is not None else 0.0

    for epoch in range(spec.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([spec.seed, _PERM, stage, epoch]).permutation(n)
        losses, drawn = [], []
        for k in range(0, n, spec.batch_size):
            idx = order[k:k + spec.batch_size]
            y = labels[idx]
            if aug.kind == "selection":
                from .selection import select_batch
                batch, mags, trace = select_batch(images[idx], y, idx, teacher, model, aug.selection,
                                                  seed=spec.seed, stage=stage, epoch=epoch)
                drawn.extend(mags)
                record.selection_trace.extend(trace)
            else:
                batch = np.empty_like(images[idx])
                for j, i in enumerate(idx):
                    if aug.kind == "none":
                        batch[j] = images[i]
                        continue
                    rng = sample_rng(spec.seed, AUG_STREAM, stage, epoch, i)
                    if aug.kind == "random":
                        batch[j], m = random_magnitude_augment(images[i], rng)
                        drawn.append(m)
                    else:
                        batch[j] = randaugment(images[i], AugPolicy(fixed_m), rng)
            x = preprocess(batch)
            logits = model(x)
            ce = cross_entropy(logits, y)
            if spec.loss.kind == "kd":
                with no_grad():
                    t_logits = teacher(x).data
                kd = spec.loss.kd
                loss = combined_loss(ce, kd_kl(t_logits, logits, kd.tau), kd.alpha)
            else:
                loss = ce
            opt.zero_grad()
            backward(loss)
            opt.step(mask)
            losses.append(loss.item() * len(idx))
        acc, vloss = evaluate(model, data.val.images, data.val.labels)
        if aug.kind in ("random", "selection"):
            record.magnitude_log[(stage, epoch)] = list(drawn)
            m_eff = float(np.mean(drawn)) if drawn else -1.0
        else:
            m_eff = float(fixed_m) if fixed_m is not None else -1.0
        record.append(EpochRow(epoch, stage, sum(losses) / n, acc, vloss, ratio, m_eff,
                               time.perf_counter() - t0))
    return record
