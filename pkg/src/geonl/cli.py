"""Command-line front end: ``geonl <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration or usage error, 3 simulation
instability in a single run.  Instabilities inside convergence, drift and
timing tables are expected outcomes and are flagged in the CSV instead.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from .integrators import StepFailure
from .poisson import ConfigurationError, apply_j

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, scheme_list: bool = False, experiment: bool = False):
    if experiment:
        p.add_argument("--experiment", choices=harness.EXPERIMENTS, required=True)
    if scheme_list:
        p.add_argument("--schemes", default="leapfrog,li,dg", help="comma-separated scheme list")
        p.add_argument("--k", default="0..5", help='levels, e.g. "0..5" or "2,3"; dt = dt_base / 2^k')
    else:
        p.add_argument("--scheme", default="li", help="leapfrog | li | dg (full names accepted)")
        p.add_argument("--k", default="0", help="level k, dt = dt_base / 2^k")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--t-end", type=float, default=None, help="override the simulated time span")
    p.add_argument("--solver", choices=("direct", "cg"), default="direct")
    p.add_argument("--newton-tol", type=float, default=1e-12)
    p.add_argument("--seed", type=int, default=None, help="run a randomized skew-symmetry check first")
    p.add_argument("--config", default=None, help="flat key=value file mirroring the flags")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geonl", description="Energy-conserving integrators for geometrically nonlinear mechanics")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in ("duffing", "beam"):
        _common(sub.add_parser(name, help=f"single {name} run"))
    col = sub.add_parser("column", help="elastic column run with VTK snapshots")
    _common(col)
    col.add_argument("--free-bcs", action="store_true", help="drop the base clamp and track angular momentum")
    conv = sub.add_parser("convergence", help="error table against the exact or reference solution")
    _common(conv, scheme_list=True, experiment=True)
    conv.add_argument("--cache", default=None, help="reference cache directory")
    drift = sub.add_parser("drift", help="energy drift table")
    _common(drift, scheme_list=True, experiment=True)
    timing = sub.add_parser("timing", help="per-step wall time table")
    _common(timing, scheme_list=True, experiment=True)
    timing.add_argument("--steps", type=int, default=50)
    return parser


def read_config(path) -> list[str]:
    """Turn ``key = value`` lines into ``--key value`` arguments; ``#`` starts a comment."""
    argv = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"malformed config line {raw!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            argv.append(flag)
        elif value.lower() not in ("false", "no", "off"):
            argv += [flag, value]
    return argv


def skew_check(exp: harness.Experiment, seed: int, draws: int = 20) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        q = 1e-3 * rng.standard_normal(exp.model.n_q)
        v = rng.standard_normal(exp.model.n_q)
        s = rng.standard_normal(exp.model.n_s)
        dv, ds = apply_j(exp.model.coupling, q, v, s)
        jx = np.concatenate([dv, ds])
        x = np.concatenate([v, s])
        worst = max(worst, abs(x @ jx) / (np.linalg.norm(x) * np.linalg.norm(jx)))
    return worst


def _single_k(text: str) -> int:
    ks = harness.parse_k_range(text)
    if len(ks) != 1:
        raise ConfigurationError("--k takes a single level for this subcommand")
    return ks[0]


def _single_run(args, experiment: str) -> int:
    out = Path(args.out)
    cfg = harness.ExperimentConfig(experiment, args.scheme, _single_k(args.k), args.t_end, str(out), args.solver,
                                   newton_tol=args.newton_tol)
    exp = harness.build_experiment(experiment)
    if args.seed is not None:
        print(f"skew check: max |x.Jx| / (|x||Jx|) = {skew_check(exp, args.seed):.3e}")
    sc = exp.config(cfg.scheme, cfg.k, cfg.t_end)
    is_column = experiment.startswith("column")
    n = sc.n_steps
    snaps = [int(round(n * f)) for f in (0.25, 0.5, 0.75, 1.0)] if is_column else None
    cfg.sample_every = None if is_column else 1
    rec = harness.run_experiment(cfg, exp, sample_steps=snaps, record_stress=is_column)
    tag = f"{experiment}_{cfg.scheme}_k{cfg.k}"
    harness.write_csv(out / f"{tag}_energy.csv", ("step", "time", "energy"), harness.energy_rows(rec))
    if experiment == "duffing" and rec.q.shape[0]:
        from .duffing import duffing_exact
        qe, ve = duffing_exact(exp.params, rec.times)
        rows = zip(rec.times, rec.q[:, 0], rec.v[:, 0], qe, ve)
        harness.write_csv(out / f"{tag}_trajectory.csv", ("time", "q", "v", "q_exact", "v_exact"), rows)
    if is_column:
        from . import fem3d
        model = exp.model
        for i, step in enumerate(rec.sample_steps):
            fem3d.export_vtk(model.mesh, out / f"{tag}_snap{i + 1}.vtk",
                             displacement=model.embed(rec.q[i]), stress_norm=fem3d.stress_frobenius(model, rec.s[i]),
                             title=f"{tag} t={step * rec.dt!r}")
        if "angular_momentum" in rec.observed:
            jm = rec.observed["angular_momentum"]
            t = rec.dt * np.arange(jm.shape[0])
            harness.write_csv(out / f"{tag}_angular_momentum.csv", ("time", "J_x", "J_y", "J_z"),
                              [(t[i], *jm[i]) for i in range(jm.shape[0])])
    rel, mean = harness.drift_report(rec)
    status = "unstable" if rec.failure else "ok"
    print(f"{tag}: steps={rec.steps_done}/{rec.n_steps} dt={rec.dt:.6g} max_rel_drift={rel:.3e} "
          f"mean_step_diff={mean:.3e} wall={rec.wall_time:.2f}s status={status}")
    if rec.failure:
        print(f"instability at step {rec.failure['step']} (t={rec.failure['time']:.6g}): {rec.failure['reason']}")
        return EXIT_UNSTABLE
    return EXIT_OK


def _table(args) -> int:
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    ks = harness.parse_k_range(args.k)
    for s in schemes:
        harness.canonical_scheme(s)
    out = Path(args.out)
    if args.command == "convergence":
        rows = harness.convergence_table(args.experiment, schemes, ks, t_span=args.t_end, cache_dir=args.cache)
        path = out / f"convergence_{args.experiment}.csv"
        harness.write_csv(path, harness.CONVERGENCE_FIELDS, rows)
    elif args.command == "drift":
        rows = harness.drift_table(args.experiment, schemes, ks, t_span=args.t_end)
        path = out / f"drift_{args.experiment}.csv"
        harness.write_csv(path, harness.DRIFT_FIELDS, rows)
    else:
        if len(ks) != 1:
            raise ConfigurationError("timing takes a single level --k")
        rows = harness.timing_table(args.experiment, schemes, ks[0], args.steps)
        path = out / f"timing_{args.experiment}.csv"
        harness.write_csv(path, harness.TIMING_FIELDS, rows)
    n_bad = sum(r["status"] != "ok" for r in rows)
    print(f"{args.command} {args.experiment}: {len(rows)} rows ({n_bad} flagged unstable) -> {path}")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        if args.config:
            args = parser.parse_args([argv[0]] + read_config(args.config) + argv[1:])
        if args.command in ("duffing", "beam"):
            return _single_run(args, args.command)
        if args.command == "column":
            return _single_run(args, "column_free" if args.free_bcs else "column")
        if args.seed is not None:
            exp = harness.build_experiment(args.experiment)
            print(f"skew check: max |x.Jx| / (|x||Jx|) = {skew_check(exp, args.seed):.3e}")
        return _table(args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"geonl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepFailure as exc:
        print(f"geonl: step failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
