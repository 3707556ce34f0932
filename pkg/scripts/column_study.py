"""Elastic column: LI snapshots at dt_base/2^5 and angular momentum of the unconstrained column.

    python scripts/column_study.py --out results/column

The snapshot run takes several minutes; ``--k`` trades accuracy for time.
"""
import argparse
import sys

from geonl.cli import main as cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/column")
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--momentum-k", type=int, default=3)
    args = ap.parse_args()
    codes = [
        cli(["column", "--scheme", "li", "--k", str(args.k), "--out", args.out]),
        cli(["column", "--free-bcs", "--scheme", "leapfrog", "--k", str(args.momentum_k), "--out", args.out]),
        cli(["column", "--free-bcs", "--scheme", "li", "--k", str(args.momentum_k), "--out", args.out]),
    ]
    sys.exit(max(codes))


if __name__ == "__main__":
    main()
