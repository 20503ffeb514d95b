"""Iterative pruning with a ratio-dependent magnitude against a constant magnitude."""
import argparse
import logging

from complab.harness.config import load_config
from complab.harness.results import read_results
from complab.harness.runner import run_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/decay.yaml")
    ap.add_argument("--out", default="runs/decay")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    run_config(load_config(args.config), args.out)
    for rec in read_results(args.out):
        finals = {}
        for r in rec.rows:
            finals[r.stage] = r
        print(rec.name)
        for st in sorted(finals):
            r = finals[st]
            print(f"  stage {st}: ratio {r.pruning_ratio:.3f}  M={r.magnitude:g}  val_acc {r.val_accuracy:.4f}")


if __name__ == "__main__":
    main()
