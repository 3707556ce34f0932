"""Experiments, references, error norms and report tables.

Time grids: an experiment has a base step ``dt_base`` and a span
``t_span``; level ``k`` uses ``dt = dt_base / 2^k`` and
``N_base * 2^k`` steps with ``N_base = round(t_span / dt_base)``, so every
level lands on the same final time and each coarse step is a fine step of
any finer level.
"""
from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import duffing, fem1d, fem3d
from .integrators import RunRecord, SchemeConfig, StepFailure, canonical_scheme, run
from .poisson import ConfigurationError, PoissonModel, PoissonState

EXPERIMENTS = ("duffing", "beam", "column", "column_free")
REFERENCE_LEVEL = {"beam": 6, "column": 7, "column_free": 7}
K_MAX = 12


@dataclass
class Experiment:
    name: str
    model: PoissonModel
    initial_state: PoissonState
    dt_base: float
    t_end: float
    params: object
    observers: dict = field(default_factory=dict)

    def n_base(self, t_span: float | None = None) -> int:
        return max(1, int(round((self.t_end if t_span is None else t_span) / self.dt_base)))

    def config(self, scheme: str, k: int = 0, t_span: float | None = None, **kw) -> SchemeConfig:
        if not 0 <= k <= K_MAX:
            raise ConfigurationError(f"k={k} outside [0, {K_MAX}]")
        dt = self.dt_base / 2**k
        n = self.n_base(t_span) * 2**k
        return SchemeConfig(dt=dt, t_end=n * dt, scheme=scheme, n_steps=n, **kw)


def build_experiment(name: str, params=None) -> Experiment:
    if name == "duffing":
        p = params or duffing.DuffingParams()
        m = duffing.duffing_system(p)
        return Experiment(name, m, m.initial_state(), p.dt_base, p.t_end, p)
    if name == "beam":
        p = params or fem1d.BeamParams()
        m = fem1d.apply_beam_bcs(fem1d.assemble_beam(params=p), "simply_supported")
        return Experiment(name, m, fem1d.beam_initial_state(p, m), p.dt_base, p.t_end, p)
    if name in ("column", "column_free"):
        p = params or fem3d.ColumnParams()
        clamped = name == "column"
        m = fem3d.assemble_elasticity(params=p, clamped=clamped)
        exp = Experiment(name, m, fem3d.column_initial_state(p, m, clamped), p.dt_base, p.t_end, p)
        if not clamped:
            exp.observers["angular_momentum"] = lambda q, v, s: fem3d.angular_momentum(m.mesh, m, q, v)
        return exp
    raise ConfigurationError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")


@dataclass
class ExperimentConfig:
    experiment: str
    scheme: str = "linearly_implicit"
    k: int = 0
    t_end: float | None = None
    out: str | None = None
    solver: str = "direct"
    sample_every: int | None = None
    newton_tol: float = 1e-12
    newton_max_iter: int = 25
    condensed: bool = True

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        self.scheme = canonical_scheme(self.scheme)
        if not 0 <= self.k <= K_MAX:
            raise ConfigurationError(f"k={self.k} outside [0, {K_MAX}]")
        if self.solver not in ("direct", "cg"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if self.t_end is not None and not self.t_end > 0:
            raise ConfigurationError("t_end must be positive")


def run_experiment(cfg: ExperimentConfig, exp: Experiment | None = None, sample_steps=None,
                   record_stress: bool = False) -> RunRecord:
    exp = exp or build_experiment(cfg.experiment)
    sc = exp.config(cfg.scheme, cfg.k, cfg.t_end, newton_tol=cfg.newton_tol, newton_max_iter=cfg.newton_max_iter,
                    condensed=cfg.condensed, backend=cfg.solver)
    return run(exp.model, sc, exp.initial_state, observers=exp.observers, sample_every=cfg.sample_every,
               sample_steps=sample_steps, record_stress=record_stress, solver_block=3 if exp.name.startswith("column") else 1)


# -- references -----------------------------------------------------------------------------------------------

def code_version() -> str:
    """Hash of the package sources; part of every reference cache key."""
    digest = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def default_cache_dir() -> Path:
    return Path(os.environ.get("GEONL_CACHE", Path.home() / ".cache" / "geonl"))


def reference_run(exp: Experiment, k_ref: int, t_span: float | None, stride: int, cache_dir=None) -> RunRecord:
    """Leapfrog reference at ``dt_base / 2^k_ref`` sampled every ``stride`` fine steps, cached on disk."""
    cfg = exp.config("leapfrog", k_ref, t_span)
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    key = f"{exp.name}|{cfg.dt!r}|{cfg.n_steps}|{stride}|{code_version()}"
    path = cache_dir / f"ref_{exp.name}_{hashlib.sha256(key.encode()).hexdigest()[:20]}.npz"
    if path.exists():
        data = np.load(path)
        return RunRecord("leapfrog", float(data["dt"]), int(data["n_steps"]), data["energy"], data["steps"],
                         data["q"], data["v"])
    rec = run(exp.model, cfg, exp.initial_state, sample_every=stride)
    if rec.failure is not None:
        raise StepFailure(f"reference run unstable at step {rec.failure['step']}", step=rec.failure["step"])
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, dt=rec.dt, n_steps=rec.n_steps, energy=rec.energy, steps=rec.sample_steps, q=rec.q, v=rec.v)
    os.replace(tmp, path)
    return rec


# -- error norms and tables -----------------------------------------------------------------------------------

def error_norms(rec: RunRecord, reference) -> tuple[float, float]:
    """Discrete L2-in-time errors ``sqrt(sum_n dt ||q_n - q_ref(t_n)||^2)`` for ``q`` and ``v``.

    ``reference`` is either a callable ``t -> (q, v)`` (arrays of shape
    ``(len(t), n)`` or ``(len(t),)``) or a `RunRecord` on a grid that
    contains every sample time of ``rec``.
    """
    if callable(reference):
        q_ref, v_ref = reference(rec.times)
        q_ref = np.asarray(q_ref).reshape(rec.q.shape)
        v_ref = np.asarray(v_ref).reshape(rec.v.shape)
    else:
        ratio = rec.dt / reference.dt
        r = int(round(ratio))
        if r < 1 or abs(ratio - r) > 1e-9 * ratio:
            raise ConfigurationError(f"time step {rec.dt} is not a multiple of the reference step {reference.dt}")
        want = rec.sample_steps * r
        idx = np.searchsorted(reference.sample_steps, want)
        if np.any(idx >= reference.sample_steps.size) or np.any(reference.sample_steps[np.minimum(idx, reference.sample_steps.size - 1)] != want):
            raise ConfigurationError("reference is not sampled at every time of the run")
        q_ref, v_ref = reference.q[idx], reference.v[idx]
    eq = math.sqrt(rec.dt * float(np.sum((rec.q - q_ref) ** 2)))
    ev = math.sqrt(rec.dt * float(np.sum((rec.v - v_ref) ** 2)))
    return eq, ev


def drift_report(rec_or_energy) -> tuple[float, float]:
    """``(max_n |H_n - H_0| / H_0, mean_n |H_{n+1} - H_n|)`` over the accepted steps."""
    if isinstance(rec_or_energy, RunRecord):
        e = rec_or_energy.energy
        if rec_or_energy.failure is not None:
            e = e[:-1]
    else:
        e = np.asarray(rec_or_energy, dtype=float)
    if e.size < 2:
        return 0.0, 0.0
    h0 = e[0]
    rel = float(np.max(np.abs(e - h0)) / h0) if h0 != 0 else float(np.max(np.abs(e - h0)))
    return rel, float(np.mean(np.abs(np.diff(e))))


def parse_k_range(text: str) -> list[int]:
    """``"3"``, ``"0..5"`` or ``"0,2,4"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(t) for t in text.split(",")]
    except ValueError as exc:
        raise ConfigurationError(f"invalid k specification {text!r}") from exc


CONVERGENCE_FIELDS = ("scheme", "k", "dt", "err_q", "err_v", "rate_q", "rate_v", "status")


def default_span(exp: Experiment) -> float:
    if exp.name == "beam":
        return exp.params.bending_period / 10.0
    return exp.t_end


def convergence_table(experiment: str, schemes, ks, t_span: float | None = None, cache_dir=None,
                      exp: Experiment | None = None, k_ref: int | None = None) -> list[dict]:
    """Errors and observed orders per scheme and level; unstable runs are flagged, not rated."""
    exp = exp or build_experiment(experiment)
    t_span = default_span(exp) if t_span is None else t_span
    ks = sorted(ks)
    if experiment == "duffing":
        reference = lambda t: duffing.duffing_exact(exp.params, t)  # noqa: E731
    else:
        k_ref = REFERENCE_LEVEL[experiment] if k_ref is None else k_ref
        if ks[-1] > k_ref:
            raise ConfigurationError(f"levels must not exceed the reference level {k_ref}")
        reference = reference_run(exp, k_ref, t_span, 2 ** (k_ref - ks[-1]), cache_dir)
    rows = []
    for scheme in schemes:
        scheme = canonical_scheme(scheme)
        prev = None
        for k in ks:
            cfg = exp.config(scheme, k, t_span)
            try:
                rec = run(exp.model, cfg, exp.initial_state, sample_every=1)
                failed = rec.failure is not None
            except StepFailure:
                failed = True
            row = {"scheme": scheme, "k": k, "dt": cfg.dt, "err_q": "", "err_v": "", "rate_q": "", "rate_v": ""}
            if failed:
                row["status"] = "unstable"
                prev = None
            else:
                eq, ev = error_norms(rec, reference)
                row.update(err_q=eq, err_v=ev, status="ok")
                if prev is not None:
                    row["rate_q"] = math.log2(prev[0] / eq) if eq > 0 else ""
                    row["rate_v"] = math.log2(prev[1] / ev) if ev > 0 else ""
                prev = (eq, ev)
            rows.append(row)
    return rows


DRIFT_FIELDS = ("scheme", "k", "dt", "max_rel_drift", "mean_step_diff", "status")


def drift_table(experiment: str, schemes, ks, t_span: float | None = None, exp: Experiment | None = None):
    exp = exp or build_experiment(experiment)
    rows = []
    for scheme in schemes:
        for k in ks:
            cfg = exp.config(scheme, k, t_span)
            rec = run(exp.model, cfg, exp.initial_state, sample_every=None)
            rel, mean = drift_report(rec)
            rows.append({"scheme": cfg.scheme, "k": k, "dt": cfg.dt, "max_rel_drift": rel, "mean_step_diff": mean,
                         "status": "ok" if rec.failure is None else "unstable"})
    return rows


TIMING_FIELDS = ("scheme", "k", "dt", "steps", "wall_s", "per_step_s", "status")


def timing_table(experiment: str, schemes, k: int, n_steps: int, exp: Experiment | None = None, fast: bool = True):
    """Wall time of ``n_steps`` steps per scheme at one level."""
    exp = exp or build_experiment(experiment)
    rows = []
    for scheme in schemes:
        cfg = exp.config(scheme, k)
        cfg.n_steps = n_steps
        rec = run(exp.model, cfg, exp.initial_state, sample_every=None, fast=fast)
        rows.append({"scheme": cfg.scheme, "k": k, "dt": cfg.dt, "steps": rec.steps_done, "wall_s": rec.wall_time,
                     "per_step_s": rec.wall_time / max(rec.steps_done, 1),
                     "status": "ok" if rec.failure is None else "unstable"})
    return rows


def format_value(x) -> str:
    """Shortest round-trip decimal for floats; plain text otherwise."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, fields, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            if isinstance(row, dict):
                row = [row[f] for f in fields]
            w.writerow([format_value(x) for x in row])


def energy_rows(rec: RunRecord):
    t = rec.dt * np.arange(rec.energy.size)
    return [(i, t[i], rec.energy[i]) for i in range(rec.energy.size)]
