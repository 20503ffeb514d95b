"""Choosing augmentation magnitudes: grid profiles, optimal/maximal magnitude, decay schedules."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

from .augment import MAX_MAGNITUDE, check_magnitude
from .errors import ConfigError

BASELINE_MAGNITUDE = -1


@dataclass(frozen=True)
class ProfileEntry:
    magnitude: int
    val_accuracy: float
    val_loss: float
    seed: int = 0


@dataclass
class MagnitudeProfile:
    entries: list = field(default_factory=list)
    baseline_accuracy: float | None = None
    baseline_loss: float | None = None
    baseline_seed: int = 0

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            check_magnitude(e.magnitude)
            if e.magnitude in seen:
                raise ConfigError(f"duplicate magnitude {e.magnitude} in profile")
            seen.add(e.magnitude)

    def accuracy(self, m: int) -> float:
        for e in self.entries:
            if e.magnitude == m:
                return e.val_accuracy
        raise KeyError(m)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["magnitude", "val_accuracy", "val_loss", "seed"])
            if self.baseline_accuracy is not None:
                wr.writerow([BASELINE_MAGNITUDE, repr(self.baseline_accuracy),
                             repr(self.baseline_loss), self.baseline_seed])
            for e in sorted(self.entries, key=lambda e: e.magnitude):
                wr.writerow([e.magnitude, repr(e.val_accuracy), repr(e.val_loss), e.seed])

    @classmethod
    def read_csv(cls, path) -> "MagnitudeProfile":
        prof = cls()
        entries = []
        with open(path, newline="") as f:
            for r in csv.DictReader(f):
                m = int(r["magnitude"])
                acc, loss, seed = float(r["val_accuracy"]), float(r["val_loss"]), int(r["seed"])
                if m == BASELINE_MAGNITUDE:
                    prof.baseline_accuracy, prof.baseline_loss, prof.baseline_seed = acc, loss, seed
                else:
                    entries.append(ProfileEntry(m, acc, loss, seed))
        return replace(prof, entries=entries)


def optimal_magnitude(profile: MagnitudeProfile) -> int:
    """Magnitude with the best validation accuracy; ties go to the weaker magnitude."""
    if not profile.entries:
        raise ConfigError("empty magnitude profile")
    best = min(profile.entries, key=lambda e: (-e.val_accuracy, e.magnitude))
    return best.magnitude


def maximal_magnitude(profile: MagnitudeProfile) -> int:
    """Largest magnitude whose accuracy is at least the no-augmentation baseline, else 0."""
    if profile.baseline_accuracy is None:
        raise ConfigError("maximal_magnitude needs a baseline accuracy")
    ok = [e.magnitude for e in profile.entries if e.val_accuracy >= profile.baseline_accuracy]
    return max(ok) if ok else 0


@dataclass(frozen=True)
class DecaySchedule:
    """Pivots ``(pruning_ratio, magnitude)``; ratios ascending, magnitudes non-increasing.

    Lookup is piecewise constant (the pivot with the largest ratio <= p) or,
    with ``interpolate=True``, linear between pivots rounded to the nearest
    integer.
    """

    pivots: tuple
    interpolate: bool = False

    def __post_init__(self):
        piv = tuple((float(p), check_magnitude(m)) for p, m in self.pivots)
        if not piv:
            raise ConfigError("decay schedule needs at least one pivot")
        for (p0, m0), (p1, m1) in zip(piv, piv[1:]):
            if p1 <= p0:
                raise ConfigError("decay pivots must have strictly ascending ratios")
            if m1 > m0:
                raise ConfigError("decay pivots must have non-increasing magnitudes")
        object.__setattr__(self, "pivots", piv)

    def to_list(self) -> list:
        return [[p, m] for p, m in self.pivots]


def decay_lookup(schedule: DecaySchedule, p: float) -> int:
    piv = schedule.pivots
    if p <= piv[0][0]:
        return piv[0][1]
    k = max(i for i, (r, _) in enumerate(piv) if r <= p)
    if not schedule.interpolate or k == len(piv) - 1:
        return piv[k][1]
    (r0, m0), (r1, m1) = piv[k], piv[k + 1]
    t = (p - r0) / (r1 - r0)
    return int(math.floor(m0 + t * (m1 - m0) + 0.5))


def schedule_from_optima(optima: dict, interpolate: bool = False) -> DecaySchedule:
    """Decay schedule through per-ratio optimal magnitudes.

    Optima measured at desk scale can be noisy; a running minimum keeps the
    schedule non-increasing.
    """
    pivots, cap = [], MAX_MAGNITUDE
    for p in sorted(optima):
        cap = min(cap, int(optima[p]))
        pivots.append((p, cap))
    return DecaySchedule(tuple(pivots), interpolate)


def grid_search_magnitude(spec, data, candidates, train_spec, *, prune_ratio: float = 0.0,
                          init_seed: int | None = None, include_baseline: bool = True,
                          on_cell=None) -> MagnitudeProfile:
    """Exhaustive search over ``candidates``: one fresh model trained per magnitude.

    Every cell starts from the same initialisation (``init_seed``, default
    ``train_spec.seed``), optionally L1-pruned to ``prune_ratio`` before
    training, and draws its augmentation/batch order from ``train_spec.seed ^ M``.
    Validation is on the un-augmented validation split.
    """
    from .models import build
    from .pruning import l1_prune
    from .training import AugSpec, train_stage

    candidates = [check_magnitude(m) for m in candidates]
    if not candidates:
        raise ConfigError("grid search needs at least one candidate magnitude")
    if len(set(candidates)) != len(candidates):
        raise ConfigError("duplicate candidate magnitudes")
    base_seed = train_spec.seed
    init_seed = base_seed if init_seed is None else init_seed

    def cell(aug, seed):
        model = build(spec, init_seed)
        mask = l1_prune(model, prune_ratio) if prune_ratio > 0 else None
        rec = train_stage(model, data, replace(train_spec, aug=aug, seed=seed), mask=mask)
        if on_cell is not None:
            on_cell(aug, seed, rec, model)
        last = rec.rows[-1]
        return last.val_accuracy, last.val_loss

    prof = MagnitudeProfile()
    if include_baseline:
        acc, loss = cell(AugSpec("none"), base_seed)
        prof.baseline_accuracy, prof.baseline_loss, prof.baseline_seed = acc, loss, base_seed
    entries = []
    for m in candidates:
        seed = base_seed ^ m
        acc, loss = cell(AugSpec("fixed", magnitude=m), seed)
        entries.append(ProfileEntry(m, acc, loss, seed))
    prof.entries = entries
    return prof
