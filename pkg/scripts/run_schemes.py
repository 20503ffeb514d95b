"""Two-stage strong/weak inheritance schemes, mean and per-seed final accuracy."""
import argparse
import logging
from collections import defaultdict

import numpy as np

from complab.harness.config import load_config
from complab.harness.results import read_summary
from complab.harness.runner import run_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/schemes.yaml", help="schemes.yaml or extra.yaml")
    ap.add_argument("--out", default="runs/schemes")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    run_config(cfg, args.out)
    per = defaultdict(dict)
    for row in read_summary(args.out):
        per[row["scheme"]][int(row["seed"])] = float(row["final_accuracy"])
    for kind in cfg.scheme.kinds:
        vals = [per[kind][s] for s in sorted(per[kind])]
        print(f"{kind:18s} mean {np.mean(vals):.4f}  per-seed {', '.join(f'{v:.4f}' for v in vals)}")


if __name__ == "__main__":
    main()
