"""Run the head/tail trade-off study and print per-scheme errors and the ordering checks.

    python3 scripts/tradeoff.py --seeds 5 --out tradeoff.json
    python3 scripts/tradeoff.py --seeds 3 --set dim=32 --set noise_scale=0.2
"""

import argparse
import json
import sys
import time

from negsampling.config import parse_overrides
from negsampling.tradeoff import run_tradeoff


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out")
    args = ap.parse_args()
    overrides, _ = parse_overrides("\n".join(args.set))
    t0 = time.time()
    res = run_tradeoff(seeds=tuple(range(args.seeds)), n_jobs=args.jobs, **overrides)
    print(f"{'scheme':26s} {'head':>14s} {'tail':>14s}")
    for row in res.table():
        print(f"{row['scheme']:26s} {row['head_mean']:.3f} ± {row['head_sd']:.3f}  {row['tail_mean']:.3f} ± {row['tail_sd']:.3f}")
    ok = True
    for name, comps in res.orderings().items():
        holds = all(c.holds for c in comps)
        ok &= holds
        print(f"{'PASS' if holds else 'FAIL'} {name}")
        for c in comps:
            print(f"    {c}")
    print(f"{time.time() - t0:.0f}s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"overrides": overrides, "seeds": args.seeds, "table": res.table(),
                       "orderings": {k: [vars(c) | {"holds": c.holds} for c in v]
                                     for k, v in res.orderings().items()}}, fh, indent=2)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
