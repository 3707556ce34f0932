"""Von Karman beam: stability at dt_base, energy series and convergence against the leapfrog reference.

    python scripts/beam_study.py --out results/beam
"""
import argparse
from pathlib import Path

from geonl import harness
from geonl.integrators import run

SCHEMES = ("leapfrog", "linearly_implicit", "discrete_gradient")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/beam")
    ap.add_argument("--cache", default=None, help="reference cache directory")
    ap.add_argument("--skip-convergence", action="store_true")
    args = ap.parse_args()
    out = Path(args.out)
    exp = harness.build_experiment("beam")

    for scheme in SCHEMES:
        rec = run(exp.model, exp.config(scheme, 0), exp.initial_state, sample_every=None)
        harness.write_csv(out / f"beam_{scheme}_k0_energy.csv", ("step", "time", "energy"), harness.energy_rows(rec))
        rel, mean = harness.drift_report(rec)
        state = f"unstable at step {rec.failure['step']}" if rec.failure else "stable"
        print(f"{scheme:>18}  {state:>22}  max rel drift {rel:.3e}  mean |dH| {mean:.3e}")

    if not args.skip_convergence:
        rows = harness.convergence_table("beam", SCHEMES, range(2, 6), exp=exp, cache_dir=args.cache)
        harness.write_csv(out / "convergence_beam.csv", harness.CONVERGENCE_FIELDS, rows)
        for r in rows:
            if r["status"] != "ok":
                print(f"{r['scheme']:>18}  k={r['k']}  unstable")
                continue
            rate = "" if r["rate_q"] == "" else f"{r['rate_q']:.3f} / {r['rate_v']:.3f}"
            print(f"{r['scheme']:>18}  k={r['k']}  err_q={r['err_q']:.3e}  err_v={r['err_v']:.3e}  rates {rate}")


if __name__ == "__main__":
    main()
