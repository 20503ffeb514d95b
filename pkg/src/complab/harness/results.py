"""CSV emission: per-epoch results, per-run summary, plot data, profiles, checkpoints.

``results.csv`` holds only deterministic quantities so that re-running a
config reproduces it byte for byte; wall-clock times go to ``timing.csv``.
Floats are written with ``repr`` so parsing them back is exact.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

from ..training import EpochRow, RunRecord

RESULT_COLUMNS = ("run", "scheme", "seed", "stage", "epoch", "train_loss", "val_accuracy", "val_loss",
                  "pruning_ratio", "magnitude")
TIMING_COLUMNS = ("run", "stage", "epoch", "wall_time")
SUMMARY_COLUMNS = ("run", "scheme", "seed", "pruning_ratio", "magnitude", "final_accuracy", "final_val_loss")
GRID = "magnitude_grid"


def _f(x: float) -> str:
    return repr(float(x))


def _write(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def summary_rows(records) -> list[tuple]:
    out = []
    for r in records:
        if not r.rows:
            continue
        last = r.rows[-1]
        out.append((r.name, r.scheme, r.seed, last.pruning_ratio, last.magnitude, last.val_accuracy,
                    last.val_loss))
    return out


def write_report(records, out_dir) -> None:
    """summary.csv and plotdata/*.csv from in-memory records."""
    out = Path(out_dir)
    summ = summary_rows(records)
    _write(out / "summary.csv", SUMMARY_COLUMNS,
           [(n, s, sd, _f(p), _f(m), _f(a), _f(l)) for n, s, sd, p, m, a, l in summ])
    by_ratio = defaultdict(list)
    schemes = []
    for n, s, sd, p, m, a, _ in summ:
        if s == GRID:
            by_ratio[p].append((int(m), sd, a))
        else:
            schemes.append((s, sd, _f(a)))
    plot = out / "plotdata"
    plot.mkdir(parents=True, exist_ok=True)
    for p, rows in sorted(by_ratio.items()):
        _write(plot / f"magnitude_accuracy_p{p:.2f}.csv", ("magnitude", "seed", "val_accuracy"),
               [(m, sd, _f(a)) for m, sd, a in sorted(rows)])
    if schemes:
        _write(plot / "scheme_accuracy.csv", ("scheme", "seed", "final_accuracy"), schemes)


def emit_results(records, out_dir, *, checkpoints=None, profiles=None, handoffs=None) -> Path:
    """Write every artefact of a set of runs into ``out_dir``; returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, timing = [], []
    for r in records:
        for e in r.rows:
            rows.append((r.name, r.scheme, r.seed, e.stage, e.epoch, _f(e.train_loss), _f(e.val_accuracy),
                         _f(e.val_loss), _f(e.pruning_ratio), _f(e.magnitude)))
            timing.append((r.name, e.stage, e.epoch, _f(e.wall_time)))
    _write(out / "results.csv", RESULT_COLUMNS, rows)
    _write(out / "timing.csv", TIMING_COLUMNS, timing)
    write_report(records, out)
    for r in records:
        if r.selection_trace:
            r.write_selection_trace(_mkparent(out / "selection" / f"{r.name}.csv"))
    for (seed, p), prof in sorted((profiles or {}).items()):
        prof.write_csv(_mkparent(out / "profiles" / f"profile_s{seed}_p{p:.2f}.csv"))
    if handoffs:
        _write(out / "handoffs.csv", ("run", "check", "expected", "actual", "ok"),
               [(r, w, e, a, int(e == a)) for r, w, e, a in handoffs])
    for name, (model, mask) in sorted((checkpoints or {}).items()):
        model.save(_mkparent(out / "checkpoints" / f"{name}.adck"))
        if mask is not None:
            mask.save(out / "checkpoints" / f"{name}.mask.adck")
    return out


def _mkparent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def read_results(out_dir) -> list[RunRecord]:
    """Parse ``results.csv`` (and ``timing.csv`` when present) back into records."""
    out = Path(out_dir)
    times = {}
    if (out / "timing.csv").exists():
        with open(out / "timing.csv", newline="") as f:
            for t in csv.DictReader(f):
                times[(t["run"], int(t["stage"]), int(t["epoch"]))] = float(t["wall_time"])
    records: dict[str, RunRecord] = {}
    with open(out / "results.csv", newline="") as f:
        for t in csv.DictReader(f):
            name = t["run"]
            if name not in records:
                records[name] = RunRecord(name, scheme=t["scheme"], seed=int(t["seed"]))
            stage, epoch = int(t["stage"]), int(t["epoch"])
            records[name].append(EpochRow(epoch, stage, float(t["train_loss"]), float(t["val_accuracy"]),
                                          float(t["val_loss"]), float(t["pruning_ratio"]),
                                          float(t["magnitude"]), times.get((name, stage, epoch), 0.0)))
    return list(records.values())


def read_summary(out_dir) -> list[dict]:
    with open(Path(out_dir) / "summary.csv", newline="") as f:
        return list(csv.DictReader(f))


def grid_optima(summary: list[dict]) -> dict:
    """``{(seed, pruning_ratio): best magnitude}`` from grid rows; ties go to the smaller magnitude."""
    best = {}
    for r in summary:
        if r["scheme"] != GRID or float(r["magnitude"]) < 0:
            continue
        key = (int(r["seed"]), float(r["pruning_ratio"]))
        cand = (-float(r["final_accuracy"]), int(float(r["magnitude"])))
        if key not in best or cand < best[key]:
            best[key] = cand
    return {k: v[1] for k, v in best.items()}
