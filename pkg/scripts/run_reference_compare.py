#!/usr/bin/env python3
"""Train hard VQ-VAE and soft/EM models on the reference mixture and print final metrics."""

import argparse
import sys
from pathlib import Path

from vqib.cli import cmd_compare

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "reference.cfg"))
    ap.add_argument("--out", default="runs/reference_compare")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    overrides = {"out_dir": args.out}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return cmd_compare(args.config, overrides)


if __name__ == "__main__":
    sys.exit(main())
