"""Squared error of the sampled softmax loss around its bound as m grows.

Prints ``m * MSE * mu^2 / sigma^2`` for a handful of random instances; the
column should settle near 1 once m is large.

    python3 scripts/convergence_rate.py --instances 5 --trials 50000
"""

import argparse
import sys

import numpy as np

from negsampling.implicit import eta_of
from negsampling.label_stats import LabelDistribution
from negsampling.verify import rate_statistic
from negsampling.weighting import WeightingScheme


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=5)
    ap.add_argument("--trials", type=int, default=50_000)
    ap.add_argument("--ms", type=int, nargs="+", default=[4, 16, 64, 256, 1024, 2048])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print("instance  weighting   " + "".join(f"m={m:<8d}" for m in args.ms))
    for i in range(args.instances):
        L = int(rng.integers(5, 33))
        y = int(rng.integers(L))
        f = rng.normal(size=L)
        q = rng.dirichlet(np.ones(L)) + 0.01
        q[y] = 0
        q /= q.sum()
        kind = ("constant", "importance", "tail")[i % 3]
        pi = LabelDistribution.from_weights(rng.exponential(size=L) + 0.05)
        eta = eta_of(y, q, WeightingScheme(kind, pi=pi if kind == "tail" else None))
        stats = [rate_statistic(y, f, q, eta, m, args.trials, rng)[0] for m in args.ms]
        print(f"{i:<9d} {kind:11s} " + "".join(f"{s:<10.3f}" for s in stats))
    return 0


if __name__ == "__main__":
    sys.exit(main())
