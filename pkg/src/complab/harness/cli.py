"""Command-line entry point.

Exit status: 0 on success, 2 for configuration (or input format) errors,
3 when a NaN/Inf appears during training.
"""
from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path

from ..errors import ConfigError, FormatError
from .config import load_config
from .results import grid_optima, read_results, read_summary, write_report
from .runner import run_config, run_decay_comparison
from .schemes import EXTRA_KINDS, KD_KINDS, PRUNE_KINDS

EXIT_CONFIG, EXIT_NUMERIC = 2, 3
KIND_GROUPS = {"prune": list(PRUNE_KINDS), "extra": list(EXTRA_KINDS), "kd": list(KD_KINDS)}


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _kinds(s):
    out = []
    for k in s.split(","):
        out += KIND_GROUPS.get(k.strip(), [k.strip()])
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="complab", description="desk-scale compression experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="experiment YAML (defaults built in)")
        p.add_argument("--out", default=out_default, help="output directory")
        return p

    p = common(sub.add_parser("grid", help="magnitude profile per pruning ratio"), "runs/grid")
    p.add_argument("--model")
    p.add_argument("--ratios", type=_floats)
    p.add_argument("--magnitudes", type=_ints)
    p.add_argument("--seed", type=_ints, help="seed or comma-separated seeds")
    p.add_argument("--epochs", type=int)

    p = common(sub.add_parser("prune", help="iterative pruning under a magnitude schedule"), "runs/prune")
    p.add_argument("--schedule", help="decay or fixed:M")
    p.add_argument("--ratios", type=_floats)
    p.add_argument("--seed", type=_ints)
    p.add_argument("--compare", action="store_true", help="run decay and the consistent magnitude side by side")

    p = common(sub.add_parser("scheme", help="inheritance scheme comparison"), "runs/scheme")
    p.add_argument("--kind", type=_kinds, help="kinds, or a group: prune, extra")
    p.add_argument("--strong-m", type=int)
    p.add_argument("--weak-m", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--seeds", type=_ints)

    p = common(sub.add_parser("distill", help="teacher-filtered augmentation against its baselines"),
               "runs/distill")
    p.add_argument("--kind", type=_kinds)
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--seeds", type=_ints)

    p = sub.add_parser("report", help="rebuild summary and plot data from results.csv")
    p.add_argument("--out", required=True)

    common(sub.add_parser("run", help="run every section listed in the config"), "runs/run")
    return ap


def _override(section, **kw):
    for k, v in kw.items():
        if v is not None:
            setattr(section, k, v)


def _report(out: Path) -> None:
    records = read_results(out)
    write_report(records, out)
    summary = read_summary(out)
    optima = grid_optima(summary)
    if optima:
        print("optimal magnitude per (seed, pruning ratio):")
        for (seed, p), m in sorted(optima.items()):
            print(f"  seed {seed}  p={p:.3f}  M*={m}")
    by_scheme = defaultdict(list)
    for r in summary:
        if r["scheme"] == "decay_vs_consistent":
            # two runs per seed; keep the decay and constant arms apart
            by_scheme[r["scheme"] + "/" + r["run"].rsplit("_", 1)[1]].append(
                (int(r["seed"]), float(r["final_accuracy"])))
        elif r["scheme"] != "magnitude_grid":
            by_scheme[r["scheme"]].append((int(r["seed"]), float(r["final_accuracy"])))
    for s, vals in sorted(by_scheme.items()):
        mean = sum(a for _, a in vals) / len(vals)
        per = " ".join(f"s{sd}={a:.4f}" for sd, a in sorted(vals))
        print(f"{s:24s} mean={mean:.4f}  {per}")


def _dispatch(args) -> None:
    if args.cmd == "report":
        out = Path(args.out)
        if not (out / "results.csv").exists():
            raise ConfigError(f"no results.csv under {out}")
        _report(out)
        return
    cfg = load_config(args.config)
    sections = [args.cmd]
    if args.cmd == "grid":
        _override(cfg.grid, model=args.model, ratios=args.ratios, magnitudes=args.magnitudes,
                  seeds=args.seed, epochs=args.epochs)
    elif args.cmd == "prune":
        _override(cfg.prune, schedule=args.schedule, ratios=args.ratios, seeds=args.seed)
    elif args.cmd == "scheme":
        _override(cfg.scheme, kinds=args.kind, strong_m=args.strong_m, weak_m=args.weak_m, ratio=args.ratio,
                  seeds=args.seeds)
    elif args.cmd == "distill":
        _override(cfg.distill, kinds=args.kind, n=args.n, alpha=args.alpha, beta=args.beta, tau=args.tau,
                  seeds=args.seeds)
    else:
        sections = None
    cfg.validate()
    out = Path(args.out)
    if args.cmd == "prune" and args.compare:
        from .results import emit_results

        res = run_decay_comparison(cfg, cfg.data.load())
        cfg.dump(out / "config.resolved.yaml")
        emit_results(res.records, out, checkpoints=res.checkpoints, handoffs=res.handoffs)
    else:
        run_config(cfg, out, sections)
    _report(out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        _dispatch(args)
    except (ConfigError, FormatError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
