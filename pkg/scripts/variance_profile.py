"""Variance of the margin-targeting decoupled loss under different proposals.

Compares uniform, prior-shaped and loss-proportional proposals for random
logits on a long-tail prior, for a few target margins.

    python3 scripts/variance_profile.py --num-labels 50 --m 8
"""

import argparse
import sys

import numpy as np

from negsampling.label_stats import ImbalanceProfile, make_profile
from negsampling.losses import margin_pair
from negsampling.variance_opt import optimal_q, variance_under
from negsampling.weighting import MarginMatrix


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--num-labels", type=int, default=50)
    ap.add_argument("--ratio", type=float, default=100.0)
    ap.add_argument("--m", type=int, default=8)
    ap.add_argument("--pair", default="softplus")
    ap.add_argument("--instances", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    pi = make_profile(ImbalanceProfile("exp", args.num_labels, args.ratio)).probs
    pair = margin_pair(args.pair)
    L = args.num_labels
    print(f"{'margin':16s} {'uniform':>12s} {'prior':>12s} {'optimal':>12s}")
    for preset in ("unit", "logit_adjusted", "equalised"):
        rho = MarginMatrix.preset(preset, pi)
        totals = np.zeros(3)
        for _ in range(args.instances):
            y = int(rng.integers(L))
            f = rng.normal(size=L)
            row = rho.row(y, L)
            uniform = np.full(L, 1 / (L - 1))
            uniform[y] = 0
            prior = pi.copy()
            prior[y] = 0
            prior /= prior.sum()
            best = optimal_q(y, f, row, pair, args.m)
            totals += [variance_under(uniform, y, f, row, args.m, pair),
                       variance_under(prior, y, f, row, args.m, pair), best.achieved_variance]
        mean = totals / args.instances
        print(f"{preset:16s} {mean[0]:12.4g} {mean[1]:12.4g} {mean[2]:12.4g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
