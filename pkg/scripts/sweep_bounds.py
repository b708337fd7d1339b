#!/usr/bin/env python3
"""Check the variational bounds on random discrete instances and summarize the gaps per bound."""

import argparse
import sys
import time
from collections import defaultdict

from vqib.ib_oracle import bound_sweep


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    start = time.perf_counter()
    rows = bound_sweep(args.n, args.seed)
    elapsed = time.perf_counter() - start

    gaps = defaultdict(list)
    for r in rows:
        gaps[r.bound_name].append(r.gap)
    print(f"{'bound':<28}{'min gap':>14}{'max gap':>14}  violations")
    for name, g in gaps.items():
        bad = sum(not r.ok for r in rows if r.bound_name == name)
        print(f"{name:<28}{min(g):>14.3e}{max(g):>14.3e}  {bad}")
    print(f"{args.n} instances in {elapsed:.2f}s (nats)")
    return 0 if all(r.ok for r in rows) else 4


if __name__ == "__main__":
    sys.exit(main())
