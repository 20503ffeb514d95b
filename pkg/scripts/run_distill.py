"""Distillation with teacher-filtered augmentation against random and fixed magnitude baselines."""
import argparse
import logging
from collections import defaultdict

import numpy as np

from complab.harness.config import load_config
from complab.harness.results import read_summary
from complab.harness.runner import run_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/distill.yaml")
    ap.add_argument("--out", default="runs/distill")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    run_config(cfg, args.out)
    per = defaultdict(list)
    for row in read_summary(args.out):
        per[row["scheme"]].append(float(row["final_accuracy"]))
    for kind, vals in per.items():
        print(f"{kind:14s} mean student accuracy {np.mean(vals):.4f} over {len(vals)} seed(s)")
    print(f"selection traces: {args.out}/selection/")


if __name__ == "__main__":
    main()
