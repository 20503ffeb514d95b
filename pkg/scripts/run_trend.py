"""Optimal magnitude per pruning ratio over several seeds (committed trend config)."""
import argparse
import logging
from collections import defaultdict

from complab.harness.config import load_config
from complab.harness.results import grid_optima, read_summary
from complab.harness.runner import run_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/trend.yaml")
    ap.add_argument("--out", default="runs/trend")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    run_config(cfg, args.out)
    by_seed = defaultdict(list)
    for (seed, p), m in sorted(grid_optima(read_summary(args.out)).items()):
        by_seed[seed].append((p, m))
    hits = 0
    for seed, pm in sorted(by_seed.items()):
        ms = [m for _, m in pm]
        mono = all(b <= a for a, b in zip(ms, ms[1:]))
        hits += mono
        print(f"seed {seed}: " + "  ".join(f"p={p:g} M*={m}" for p, m in pm) + f"  non-increasing={mono}")
    print(f"non-increasing for {hits}/{len(by_seed)} seeds")


if __name__ == "__main__":
    main()
