"""Print the implied margin of every (sampler, weighting) pair on a long-tail prior.

For each row the margin is shown for four positive/negative combinations
(head or tail positive against a head or tail negative), which is where the
head-heavy and tail-heavy behaviour shows up.

    python3 scripts/implied_margins.py --num-labels 100 --ratio 100 --m 32
"""

import argparse
import csv
import sys

from negsampling.implicit import CATALOG, catalog_implicit
from negsampling.label_stats import ImbalanceProfile, make_profile


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--num-labels", type=int, default=100)
    ap.add_argument("--ratio", type=float, default=100.0)
    ap.add_argument("--profile", choices=("step", "exp"), default="step")
    ap.add_argument("--m", type=int, default=32)
    ap.add_argument("--convention", choices=("exclusive", "inclusive"), default="exclusive")
    ap.add_argument("--csv", help="also write the table here")
    args = ap.parse_args()

    pi = make_profile(ImbalanceProfile(args.profile, args.num_labels, args.ratio)).probs
    head, tail = 0, args.num_labels - 1
    other_head, other_tail = 1, args.num_labels - 2
    rows = []
    for row in CATALOG:
        if row.family != "softmax":
            continue
        entry = catalog_implicit(row.sampler, row.weighting, pi, args.m, convention=args.convention)
        r_head, r_tail = entry.rho(head), entry.rho(tail)
        rows.append({"scheme": f"{row.sampler}+{row.weighting}",
                     "head->head": r_head[other_head], "head->tail": r_head[tail],
                     "tail->head": r_tail[head], "tail->tail": r_tail[other_tail],
                     "implicit_loss": row.comment})
    cols = list(rows[0])
    print(f"{'scheme':26s}" + "".join(f"{c:>13s}" for c in cols[1:5]) + "  implicit loss")
    for r in rows:
        print(f"{r['scheme']:26s}" + "".join(f"{r[c]:13.4g}" for c in cols[1:5]) + f"  {r['implicit_loss']}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
