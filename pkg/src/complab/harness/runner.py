"""Turn a resolved ExperimentConfig section into scheme runs."""
from __future__ import annotations

import logging
from pathlib import Path

from ..training import AugSpec
from .config import ExperimentConfig, parse_fixed
from .results import emit_results
from .schemes import (EXTRA_KINDS, PRUNE_KINDS, SchemeResult, decay_scheme, distill_scheme, grid_scheme,
                      inheritance_scheme, iterative_run, run_comparison, run_scheme)

log = logging.getLogger("complab")


def _merge(total: SchemeResult, part: SchemeResult):
    total.records += part.records
    total.checkpoints.update(part.checkpoints)
    total.handoffs += part.handoffs
    total.profiles.update(part.profiles)


def run_grid(cfg: ExperimentConfig, data) -> SchemeResult:
    g = cfg.grid
    total = SchemeResult()
    for seed in g.seeds:
        log.info("grid seed=%d ratios=%s magnitudes=%s", seed, g.ratios, g.magnitudes)
        s = grid_scheme(cfg.model(g.model), seed, cfg.train.stage(g.epochs), g.ratios, g.magnitudes)
        _merge(total, run_scheme(s, data))
    return total


def run_prune(cfg: ExperimentConfig, data) -> SchemeResult:
    p = cfg.prune
    total = SchemeResult()
    stage = cfg.train.stage(p.epochs_per_stage)
    for seed in p.seeds:
        log.info("iterative prune seed=%d schedule=%s", seed, p.schedule)
        if p.schedule == "decay":
            aug = AugSpec("decay", schedule=p.decay())
        else:
            aug = AugSpec("fixed", magnitude=parse_fixed(p.schedule))
        name = f"prune_{p.schedule.replace(':', '')}_s{seed}"
        _merge(total, iterative_run(cfg.model(p.model), seed, stage, p.ratios, aug, data, name=name))
    return total


def run_decay_comparison(cfg: ExperimentConfig, data) -> SchemeResult:
    p = cfg.prune
    total = SchemeResult()
    for seed in p.seeds:
        s = decay_scheme(cfg.model(p.model), seed, cfg.train.stage(p.epochs_per_stage), p.ratios, p.decay())
        _merge(total, run_scheme(s, data))
    return total


def run_schemes(cfg: ExperimentConfig, data) -> SchemeResult:
    c = cfg.scheme
    total = SchemeResult()
    model = cfg.model(c.model)
    s1, s2 = cfg.train.stage(c.stage1_epochs), cfg.train.stage(c.stage2_epochs)
    groups = [[k for k in c.kinds if k in PRUNE_KINDS], [k for k in c.kinds if k in EXTRA_KINDS]]
    for seed in c.seeds:
        for kinds in filter(None, groups):
            specs = [inheritance_scheme(k, model, seed, strong_m=c.strong_m, weak_m=c.weak_m, stage1=s1,
                                        stage2=s2, ratio=c.ratio, extra_blocks=c.extra_blocks)
                     for k in kinds]
            log.info("schemes %s seed=%d", kinds, seed)
            _merge(total, run_comparison(specs, data))
    return total


def run_distill(cfg: ExperimentConfig, data) -> SchemeResult:
    d = cfg.distill
    total = SchemeResult()
    for seed in d.seeds:
        specs = [distill_scheme(k, cfg.model(d.student), cfg.model(d.teacher), seed,
                                teacher_stage=cfg.train.stage(d.teacher_epochs), teacher_m=d.teacher_m,
                                student_stage=cfg.train.stage(d.epochs), kd=d.kd(), selection=d.selection(),
                                fixed_m=d.fixed_m)
                 for k in d.kinds]
        log.info("distill %s seed=%d", d.kinds, seed)
        _merge(total, run_comparison(specs, data))
    return total


SECTION_RUNNERS = {"grid": run_grid, "prune": run_prune, "decay": run_decay_comparison, "scheme": run_schemes,
                   "distill": run_distill}


def run_config(cfg: ExperimentConfig, out_dir, sections=None, data=None) -> SchemeResult:
    """Run ``sections`` (default: ``cfg.run``) and write every artefact into ``out_dir``."""
    out = Path(out_dir)
    data = cfg.data.load() if data is None else data
    total = SchemeResult()
    for sec in sections or cfg.run:
        _merge(total, SECTION_RUNNERS[sec](cfg, data))
    cfg.dump(out / "config.resolved.yaml")
    emit_results(total.records, out, checkpoints=total.checkpoints, profiles=total.profiles,
                 handoffs=total.handoffs)
    return total
