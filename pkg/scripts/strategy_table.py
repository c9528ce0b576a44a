"""Higher-rank energy share of the global update for all four strategies.

Runs the reference synthetic setting for several seeds and prints a
strategies x rounds table (mean and std over seeds, in percent).

    python3 scripts/strategy_table.py [--seeds 0,1,2] [--eta 0.2] [--rounds 100]
"""

import argparse
from dataclasses import replace

import numpy as np

from ranklab.harness import STRATEGIES, ExperimentConfig, run_experiment

ROUNDS = (1, 10, 20, 30, 50, 100)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--eta", type=float, default=0.2)
    ap.add_argument("--rounds", type=int, default=100)
    ap.add_argument("--carry-over", action="store_true")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    cfg = ExperimentConfig(eta=args.eta, rounds=args.rounds, carry_over=args.carry_over)
    shown = [r for r in ROUNDS if r <= args.rounds]

    print("Method    " + "".join(f"{'R=' + str(r):>16}" for r in shown))
    for strategy in STRATEGIES:
        runs = [run_experiment(replace(cfg, strategy=strategy, seed=s)) for s in seeds]
        cells = []
        for r in shown:
            v = np.array([run[r - 1].higher_rank_share for run in runs]) * 100
            cells.append(f"{v.mean():8.2f} ± {v.std():5.2f}")
        print(f"{strategy:<10}" + "".join(f"{c:>16}" for c in cells))


if __name__ == "__main__":
    main()
