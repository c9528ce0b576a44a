"""FlexLoRA higher-rank share at a fixed round as the drift parameter grows.

    python3 scripts/heterogeneity_sweep.py [--etas 0,0.2,0.5] [--seeds 5] [--round 10]
"""

import argparse
from dataclasses import replace

import numpy as np

from ranklab.harness import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--etas", default="0,0.2,0.5")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--round", type=int, default=10)
    ap.add_argument("--strategy", default="flexlora")
    args = ap.parse_args()

    print(f"{'eta':>6} {'mean share':>12} {'std':>8}")
    for eta in (float(x) for x in args.etas.split(",")):
        cfg = ExperimentConfig(eta=eta, rounds=args.round, strategy=args.strategy)
        v = [run_experiment(replace(cfg, seed=s))[-1].higher_rank_share for s in range(args.seeds)]
        print(f"{eta:6.2f} {np.mean(v):12.4f} {np.std(v):8.4f}")


if __name__ == "__main__":
    main()
