"""Duffing oscillator: energy drift over 100 periods and the convergence table.

    python scripts/duffing_study.py --out results/duffing
"""
import argparse
from pathlib import Path

from geonl import harness

SCHEMES = ("leapfrog", "linearly_implicit", "discrete_gradient")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/duffing")
    ap.add_argument("--k-max", type=int, default=5)
    args = ap.parse_args()
    out = Path(args.out)

    exp = harness.build_experiment("duffing")
    drift = harness.drift_table("duffing", SCHEMES, [0], exp=exp)
    harness.write_csv(out / "drift_duffing.csv", harness.DRIFT_FIELDS, drift)
    for row in drift:
        print(f"{row['scheme']:>18}  max rel drift {row['max_rel_drift']:.3e}")

    rows = harness.convergence_table("duffing", SCHEMES, range(args.k_max + 1), exp=exp)
    harness.write_csv(out / "convergence_duffing.csv", harness.CONVERGENCE_FIELDS, rows)
    for r in rows:
        rate = "" if r["rate_q"] == "" else f"{r['rate_q']:.3f}"
        print(f"{r['scheme']:>18}  k={r['k']}  err_q={r['err_q']:.3e}  rate={rate}")


if __name__ == "__main__":
    main()
