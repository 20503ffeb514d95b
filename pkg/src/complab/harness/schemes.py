"""Multi-stage experiment schemes with verified weight handoffs.

Inheritance comparisons (pruning and additional-layer variants) run three
two-stage schemes that differ only in stage one; the distillation
comparison shares one teacher stage and differs in how the student's
training views are chosen.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..errors import ConfigError, ContractError
from ..losses import KDConfig
from ..models import ModelSpec, attach_extra, build, detach_extra, transfer_weights
from ..policy import DecaySchedule, grid_search_magnitude
from ..pruning import check_ascending, iterative_prune, l1_prune, masked_checksum
from ..selection import SelectionConfig
from ..training import AugSpec, LossSpec, RunRecord, TrainSpec, train_stage

PRUNE_KINDS = ("prune_inherit", "prune_baseline_a", "prune_baseline_b")
EXTRA_KINDS = ("extra_inherit", "extra_baseline_a", "extra_baseline_b")
KD_KINDS = ("kd_filtered", "kd_baseline_a", "kd_baseline_b")
KINDS = PRUNE_KINDS + EXTRA_KINDS + KD_KINDS + ("magnitude_grid", "decay_vs_consistent")


@dataclass(frozen=True)
class SchemeSpec:
    """One scheme run. ``stages`` holds the TrainSpec of every stage in order.

    For distillation kinds stage 0 trains the teacher (``teacher`` spec) and
    stage 1 the student. ``magnitude_grid`` has a single template stage whose
    augmentation is replaced per cell; ``decay_vs_consistent`` has one stage
    per pruning ratio and runs the schedule against a constant magnitude.
    """

    kind: str
    model: ModelSpec
    stages: tuple
    seed: int
    strong_m: int | None = None
    weak_m: int | None = None
    ratio: float = 0.0
    extra_blocks: int = 0
    teacher: ModelSpec | None = None
    ratios: tuple = ()
    magnitudes: tuple = ()
    name: str = ""

    def validate(self):
        k, st = self.kind, self.stages
        if k not in KINDS:
            raise ConfigError(f"unknown scheme kind {k!r}")
        if not all(isinstance(s, TrainSpec) for s in st):
            raise ConfigError("stages must be TrainSpecs")
        self.model.validate()
        if k in PRUNE_KINDS + EXTRA_KINDS:
            if len(st) != 2:
                raise ConfigError(f"{k} has exactly two stages, got {len(st)}")
            first = self.weak_m if k.endswith("baseline_b") else self.strong_m
            _expect_fixed(st[0], first, f"{k} stage 1")
            _expect_fixed(st[1], self.weak_m, f"{k} stage 2")
            if any(s.loss.kind != "ce" for s in st):
                raise ConfigError(f"{k} trains with cross-entropy only")
        if k in PRUNE_KINDS and not 0 < self.ratio < 1:
            raise ConfigError(f"{k} needs a pruning ratio in (0, 1), got {self.ratio}")
        if k in EXTRA_KINDS:
            if self.extra_blocks < 1:
                raise ConfigError(f"{k} needs extra_blocks >= 1")
            if k != "extra_baseline_a" and st[1].head_seed is None:
                raise ConfigError(f"{k} stage 2 needs a head_seed for the re-initialised head")
        if k in KD_KINDS:
            if len(st) != 2:
                raise ConfigError(f"{k} has exactly two stages (teacher, student), got {len(st)}")
            if self.teacher is None:
                raise ConfigError(f"{k} needs a teacher model spec")
            if st[0].loss.kind != "ce" or st[1].loss.kind != "kd":
                raise ConfigError(f"{k}: teacher stage uses ce, student stage uses kd")
            want = {"kd_filtered": "selection", "kd_baseline_a": "random", "kd_baseline_b": "fixed"}[k]
            if st[1].aug.kind != want:
                raise ConfigError(f"{k} student stage needs {want!r} augmentation, got {st[1].aug.kind!r}")
            if k == "kd_baseline_b" and st[1].aug.magnitude != self.weak_m:
                raise ConfigError("kd_baseline_b trains at the fixed magnitude weak_m")
        if k == "magnitude_grid":
            if len(st) != 1:
                raise ConfigError("magnitude_grid has one template stage")
            if not self.magnitudes:
                raise ConfigError("magnitude_grid needs candidate magnitudes")
            if not self.ratios:
                raise ConfigError("magnitude_grid needs at least one pruning ratio")
        if k == "decay_vs_consistent":
            check_ascending(self.ratios)
            if len(st) != len(self.ratios):
                raise ConfigError(f"{len(self.ratios)} ratios but {len(st)} stages")
            if any(s.aug.kind != "decay" for s in st):
                raise ConfigError("decay_vs_consistent stages carry the decay schedule")
        return self


def _expect_fixed(spec: TrainSpec, m, where):
    if spec.aug.kind != "fixed" or spec.aug.magnitude != m:
        raise ConfigError(f"{where} must use fixed magnitude {m}, got {spec.aug}")


@dataclass
class SchemeResult:
    records: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)  # name -> (Model, PruneState | None)
    handoffs: list = field(default_factory=list)  # (run, description, expected, actual)
    profiles: dict = field(default_factory=dict)  # (seed, ratio) -> MagnitudeProfile

    def check(self, run: str, what: str, expected: str, actual: str):
        self.handoffs.append((run, what, expected, actual))
        if expected != actual:
            raise ContractError(f"{run}: handoff mismatch for {what}")


def _record(scheme: SchemeSpec, suffix: str = "") -> RunRecord:
    name = scheme.name or f"{scheme.kind}_s{scheme.seed}"
    return RunRecord(name + suffix, scheme=scheme.kind, seed=scheme.seed)


def _run_prune(s: SchemeSpec, data, res: SchemeResult):
    rec = _record(s)
    model = build(s.model, s.seed)
    if s.kind == "prune_baseline_a":
        mask = l1_prune(model, s.ratio)
        train_stage(model, data, s.stages[0], mask=mask, stage=0, record=rec)
        before = masked_checksum(model, mask)
        small = model
    else:
        train_stage(model, data, s.stages[0], stage=0, record=rec)
        small = build(s.model, s.seed)
        transfer_weights(model, small)
        mask = l1_prune(small, s.ratio)
        # surviving weights of the trained dense model must be exactly the pruned start
        before = masked_checksum(model, mask)
    res.check(rec.name, "surviving weights at stage 2 start", before, masked_checksum(small, mask))
    train_stage(small, data, s.stages[1], mask=mask, stage=1, record=rec)
    res.records.append(rec)
    res.checkpoints[rec.name] = (small, mask)


def _run_extra(s: SchemeSpec, data, res: SchemeResult):
    rec = _record(s)
    base = build(s.model, s.seed)
    if s.kind == "extra_baseline_a":
        train_stage(base, data, s.stages[0], stage=0, record=rec)
        small = base
    else:
        big = attach_extra(base, s.extra_blocks, seed=s.seed + 1)
        train_stage(big, data, s.stages[0], stage=0, record=rec)
        small = detach_extra(big, s.model, head_seed=s.stages[1].head_seed)
        shared = [n for n in small.params if not n.startswith("head.")]
        res.check(rec.name, "shared backbone after detach", big.checksum(shared), small.checksum(shared))
    train_stage(small, data, s.stages[1], stage=1, record=rec)
    res.records.append(rec)
    res.checkpoints[rec.name] = (small, None)


def _train_teacher(s: SchemeSpec, data, cache: dict | None):
    key = (s.teacher, s.stages[0], s.seed)
    if cache is not None and key in cache:
        teacher, rows = cache[key]
        return teacher, rows
    teacher = build(s.teacher, s.seed)
    rec = train_stage(teacher, data, s.stages[0], stage=0, record=RunRecord("teacher"))
    if cache is not None:
        cache[key] = (teacher, rec.rows)
    return teacher, rec.rows


def _run_kd(s: SchemeSpec, data, res: SchemeResult, cache=None):
    rec = _record(s)
    teacher, rows = _train_teacher(s, data, cache)
    frozen = teacher.checksum()
    for r in rows:
        rec.append(r)
    student = build(s.model, s.seed)
    train_stage(student, data, s.stages[1], teacher=teacher, stage=1, record=rec)
    res.check(rec.name, "teacher unchanged by distillation", frozen, teacher.checksum())
    res.records.append(rec)
    res.checkpoints[rec.name] = (student, None)
    res.checkpoints[rec.name + "_teacher"] = (teacher, None)


def _run_grid(s: SchemeSpec, data, res: SchemeResult):
    base = s.name or f"grid_s{s.seed}"
    for p in s.ratios:
        def on_cell(aug, seed, rec, model, p=p):
            m = aug.magnitude if aug.kind == "fixed" else -1
            rec.name = f"{base}_p{p:g}_m{m}"
            rec.scheme, rec.seed = s.kind, s.seed
            rec.meta.update(cell_seed=seed, target_ratio=p)
            res.records.append(rec)

        prof = grid_search_magnitude(s.model, data, s.magnitudes, s.stages[0], prune_ratio=p,
                                     init_seed=s.seed, on_cell=on_cell)
        res.profiles[(s.seed, p)] = prof


def _run_iterative(s: SchemeSpec, data, res: SchemeResult, stages, suffix):
    rec = _record(s, suffix)
    model = build(s.model, s.seed)
    out = iterative_prune(model, s.ratios, stages, data, run_name=rec.name)
    prev = None
    for snap, mask, r in out:
        if prev is not None and any((prev.masks[n] == 0)[mask.masks[n] != 0].any() for n in mask.masks):
            raise ContractError(f"{rec.name}: masks shrank between stages")
        prev = mask
        rec.extend(r)
    res.records.append(rec)
    res.checkpoints[rec.name] = (out[-1][0], out[-1][1])


def _run_decay(s: SchemeSpec, data, res: SchemeResult):
    schedule: DecaySchedule = s.stages[0].aug.schedule
    const = AugSpec("fixed", magnitude=schedule.pivots[0][1])
    _run_iterative(s, data, res, list(s.stages), "_decay")
    _run_iterative(s, data, res, [replace(t, aug=const) for t in s.stages], "_consistent")


def run_scheme(scheme: SchemeSpec, data, *, teacher_cache: dict | None = None) -> SchemeResult:
    """Execute every stage of ``scheme`` with verified handoffs; returns records and final models."""
    scheme.validate()
    res = SchemeResult()
    k = scheme.kind
    if k in PRUNE_KINDS:
        _run_prune(scheme, data, res)
    elif k in EXTRA_KINDS:
        _run_extra(scheme, data, res)
    elif k in KD_KINDS:
        _run_kd(scheme, data, res, teacher_cache)
    elif k == "magnitude_grid":
        _run_grid(scheme, data, res)
    else:
        _run_decay(scheme, data, res)
    return res


def check_controlled(schemes) -> None:
    """Refuse comparisons whose shared stages differ.

    Inheritance schemes must agree on the whole final stage. Distillation
    schemes must agree on the teacher stage and on every student setting
    except the view augmentation, which is what they compare.
    """
    schemes = list(schemes)
    for s in schemes:
        s.validate()
    if len(schemes) < 2:
        return
    ref = schemes[0]
    kd = ref.kind in KD_KINDS
    for s in schemes[1:]:
        if (s.kind in KD_KINDS) != kd:
            raise ConfigError("cannot compare distillation and inheritance schemes")
        last, ref_last = s.stages[-1], ref.stages[-1]
        if kd:
            last, ref_last = replace(last, aug=AugSpec()), replace(ref_last, aug=AugSpec())
        if last != ref_last or s.model != ref.model or s.seed != ref.seed:
            raise ConfigError(f"{s.kind} and {ref.kind} differ in their final stage; comparison refused")
        if kd and (s.stages[0] != ref.stages[0] or s.teacher != ref.teacher):
            raise ConfigError(f"{s.kind} and {ref.kind} use different teachers; comparison refused")
        if ref.kind in PRUNE_KINDS and s.ratio != ref.ratio:
            raise ConfigError("pruning comparison needs one shared ratio")


def run_comparison(schemes, data) -> SchemeResult:
    """Run schemes that must share their final stage, after verifying they do."""
    schemes = list(schemes)
    check_controlled(schemes)
    total, cache = SchemeResult(), {}
    for s in schemes:
        r = run_scheme(s, data, teacher_cache=cache)
        total.records += r.records
        total.checkpoints.update(r.checkpoints)
        total.handoffs += r.handoffs
        total.profiles.update(r.profiles)
    return total


# --- builders --------------------------------------------------------------------

@dataclass(frozen=True)
class StageSettings:
    epochs: int
    batch_size: int
    lr: float
    momentum: float

    def spec(self, aug: AugSpec, seed: int, loss: LossSpec | None = None, head_seed=None) -> TrainSpec:
        return TrainSpec(self.epochs, self.batch_size, self.lr, self.momentum, aug,
                         loss or LossSpec("ce"), seed, head_seed)


def inheritance_scheme(kind: str, model: ModelSpec, seed: int, *, strong_m: int, weak_m: int,
                       stage1: StageSettings, stage2: StageSettings, ratio: float = 0.0,
                       extra_blocks: int = 0, head_seed: int | None = None) -> SchemeSpec:
    if kind not in PRUNE_KINDS + EXTRA_KINDS:
        raise ConfigError(f"{kind!r} is not an inheritance scheme")
    first = weak_m if kind.endswith("baseline_b") else strong_m
    if head_seed is None and kind in EXTRA_KINDS:
        head_seed = seed + 2
    s1 = stage1.spec(AugSpec("fixed", magnitude=first), seed)
    s2 = stage2.spec(AugSpec("fixed", magnitude=weak_m), seed, head_seed=head_seed)
    return SchemeSpec(kind, model, (s1, s2), seed, strong_m=strong_m, weak_m=weak_m, ratio=ratio,
                      extra_blocks=extra_blocks).validate()


def distill_scheme(kind: str, student: ModelSpec, teacher: ModelSpec, seed: int, *,
                   teacher_stage: StageSettings, teacher_m: int, student_stage: StageSettings,
                   kd: KDConfig, selection: SelectionConfig, fixed_m: int) -> SchemeSpec:
    if kind not in KD_KINDS:
        raise ConfigError(f"{kind!r} is not a distillation scheme")
    aug = {
        "kd_filtered": AugSpec("selection", selection=selection),
        "kd_baseline_a": AugSpec("random"),
        "kd_baseline_b": AugSpec("fixed", magnitude=fixed_m),
    }[kind]
    s0 = teacher_stage.spec(AugSpec("fixed", magnitude=teacher_m), seed)
    s1 = student_stage.spec(aug, seed, LossSpec("kd", kd))
    return SchemeSpec(kind, student, (s0, s1), seed, weak_m=fixed_m, teacher=teacher).validate()


def grid_scheme(model: ModelSpec, seed: int, stage: StageSettings, ratios, magnitudes) -> SchemeSpec:
    return SchemeSpec("magnitude_grid", model, (stage.spec(AugSpec("none"), seed),), seed,
                      ratios=tuple(float(p) for p in ratios),
                      magnitudes=tuple(int(m) for m in magnitudes)).validate()


def decay_scheme(model: ModelSpec, seed: int, stage: StageSettings, ratios,
                 schedule: DecaySchedule) -> SchemeSpec:
    ratios = tuple(check_ascending(ratios))
    stages = tuple(stage.spec(AugSpec("decay", schedule=schedule), seed) for _ in ratios)
    return SchemeSpec("decay_vs_consistent", model, stages, seed, ratios=ratios).validate()


def iterative_run(model: ModelSpec, seed: int, stage: StageSettings, ratios, aug: AugSpec, data,
                  name: str = "") -> SchemeResult:
    """A single iterative-pruning run under one augmentation setting (decay or fixed)."""
    ratios = tuple(check_ascending(ratios))
    s = SchemeSpec("decay_vs_consistent", model, (), seed, ratios=ratios,
                   name=name or f"prune_{aug.kind}_s{seed}")
    res = SchemeResult()
    _run_iterative(s, data, res, [stage.spec(aug, seed) for _ in ratios], "")
    for r in res.records:
        r.scheme = "iterative_prune"
    return res
