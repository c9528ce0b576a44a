"""Print the collapse forecast for the reference population and check the bound.

    python3 scripts/theory_check.py [--m 10] [--beta 1.0] [--rounds 200]
"""

import argparse

import numpy as np

from ranklab.dynamics import closed_form_trace, first_round_below, theorem_bound
from ranklab.population import RankConfig, assign_ranks, forecast


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", type=int, default=100)
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--beta", type=float, default=1.0)
    ap.add_argument("--rounds", type=int, default=200)
    args = ap.parse_args()

    pop = assign_ranks(RankConfig.uniform((8, 16, 32, 48, 64)), args.k, seed=0)
    fc = forecast(pop, args.m, args.beta, np.ones(pop.r_max))
    share = closed_form_trace(np.ones(pop.r_max), fc, args.rounds, ranks=(fc.r1,)).higher_rank_share
    bound = np.array([theorem_bound(fc, t) for t in range(args.rounds + 1)])

    print(f"gamma = {fc.gamma:.9f}   C = {fc.c0}   r1 = {fc.r1}")
    print(f"violations over t=0..{args.rounds}: {int(np.sum(share > bound))}")
    print(f"first t with bound < 1e-3: {first_round_below(fc, 1e-3)}")
    print(f"{'t':>4} {'1-rho':>12} {'bound':>12}")
    for t in (0, 1, 2, 5, 10, 20, 50, 100):
        if t <= args.rounds:
            print(f"{t:>4} {share[t]:12.4e} {bound[t]:12.4e}")


if __name__ == "__main__":
    main()
