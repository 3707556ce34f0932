"""Time stepping over a `PoissonModel`.

Three schemes:

* leapfrog (Stormer-Verlet in staggered form), explicit;
* linearly implicit: leapfrog in ``q`` and implicit midpoint in ``(v, s)``
  with ``J`` frozen at ``q_{n+1/2}``; conserves ``1/2 x^T H x`` exactly and
  needs one linear solve per step (monolithic, or condensed onto ``v``);
* discrete gradient: midpoint rule with the stress averaged between the
  end points, solved by Newton on ``q_{n+1}``.

Leapfrog and the linearly implicit scheme carry ``q`` at half steps and
``(v, s)`` at integer steps.  Reported displacements at integer times are
``(q_{n-1/2} + q_{n+1/2}) / 2``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .poisson import AffineCoupling, ConfigurationError, PoissonModel, PoissonState
from .solvers import BandedPattern, block_jacobi, factor_spd, solve_cg

SCHEMES = ("leapfrog", "linearly_implicit", "discrete_gradient")
ALIASES = {"lf": "leapfrog", "li": "linearly_implicit", "dg": "discrete_gradient"}
BLOWUP_FACTOR = 1e6
FAST_MAX_DOFS = 400


def canonical_scheme(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {name!r}; expected one of {SCHEMES + tuple(ALIASES)}")
    return name


@dataclass
class SchemeConfig:
    dt: float
    t_end: float
    scheme: str = "linearly_implicit"
    newton_tol: float = 1e-12
    newton_max_iter: int = 25
    condensed: bool = True
    backend: str = "direct"
    cg_tol: float = 1e-12
    n_steps: int | None = None

    def __post_init__(self):
        self.scheme = canonical_scheme(self.scheme)
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.t_end >= self.dt * (1 - 1e-12):
            raise ConfigurationError("t_end must be at least one time step")
        if not 0 < self.newton_tol <= 1e-4:
            raise ConfigurationError("newton_tol must lie in (0, 1e-4]")
        if self.newton_max_iter < 1:
            raise ConfigurationError("newton_max_iter must be >= 1")
        if self.backend not in ("direct", "cg"):
            raise ConfigurationError(f"unknown solver backend {self.backend!r}")
        if self.n_steps is None:
            self.n_steps = int(round(self.t_end / self.dt))


class StepFailure(RuntimeError):
    def __init__(self, message, step=None, time=None, residuals=None):
        self.step = step
        self.time = time
        self.residuals = list(residuals or [])
        super().__init__(message)


@dataclass
class NewtonInfo:
    iterations: int
    residuals: list


class LinearSolver:
    """Per-run cache for the SPD solves: mass factor and banded pattern reuse."""

    def __init__(self, model: PoissonModel, backend: str = "direct", cg_tol: float = 1e-12, block: int = 1):
        self.model = model
        self.backend = backend
        self.cg_tol = cg_tol
        self.block = block
        self._mass_factor = None
        self._pattern: BandedPattern | None = None

    @property
    def mass_factor(self):
        if self._mass_factor is None:
            self._mass_factor = factor_spd(self.model.mass.m_rho)
        return self._mass_factor

    def solve_mass(self, rhs):
        return self.mass_factor.solve(rhs)

    def solve_spd(self, a, rhs, x0=None):
        if self.backend == "cg" and sp.issparse(a):
            return solve_cg(a, rhs, precond=block_jacobi(a, self.block), tol=self.cg_tol, x0=x0).x
        fac = factor_spd(a, pattern=self._pattern)
        self._pattern = fac.pattern
        return fac.solve(rhs)


def _solve_general(a, rhs):
    if sp.issparse(a):
        return spla.spsolve(sp.csc_matrix(a), rhs)
    return np.linalg.solve(a, rhs)


def _solve_equilibrated(a, rhs, refine: int = 1):
    """LU solve after symmetric diagonal scaling, plus iterative refinement.

    The monolithic LI matrix mixes mass and compliance blocks whose entries
    differ by many orders of magnitude; unscaled pivoting loses digits.
    """
    diag = np.abs(a.diagonal())
    d = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
    if sp.issparse(a):
        dm = sp.diags(d)
        lu = spla.splu(sp.csc_matrix(dm @ a @ dm))
        solve = lu.solve
    else:
        lu = sla.lu_factor(d[:, None] * a * d[None, :])
        solve = lambda r: sla.lu_solve(lu, r)  # noqa: E731
    x = d * solve(d * rhs)
    for _ in range(refine):
        x = x + d * solve(d * (rhs - a @ x))
    return x


def _solver(model, solver):
    return solver if solver is not None else LinearSolver(model)


def init_half_step(model: PoissonModel, q0, v0, dt, solver: LinearSolver | None = None):
    """Second-order Taylor start ``q_{1/2} = q0 + dt/2 v0 + dt^2/8 a0`` with ``M_rho a0 = f(q0)``."""
    a0 = _solver(model, solver).solve_mass(model.rhs_force(q0))
    return q0 + 0.5 * dt * v0 + 0.125 * dt * dt * a0


def step_leapfrog(model: PoissonModel, q_half_prev, v_n, dt, solver: LinearSolver | None = None):
    """``(q_{n-1/2}, v_n) -> (q_{n+1/2}, v_{n+1})``."""
    q_half = q_half_prev + dt * v_n
    v_next = v_n + dt * _solver(model, solver).solve_mass(model.rhs_force(q_half))
    return q_half, v_next


def step_linearly_implicit(model: PoissonModel, q_half_prev, v_n, s_n, dt, condensed: bool = True,
                           solver: LinearSolver | None = None):
    """``(q_{n-1/2}, v_n, s_n) -> (q_{n+1/2}, v_{n+1}, s_{n+1})``.

    Condensed form solves ``[M + dt^2/4 K] v_{n+1} = [M - dt^2/4 K] v_n - dt L^T s_n``
    with ``K = L^T M_C^{-1} L`` and then updates the stress blockwise.
    """
    q_half = q_half_prev + dt * v_n
    L = model.L(q_half)
    M = model.mass.m_rho
    m_c = model.mass.m_c
    if condensed:
        a = model.implicit_matrix(q_half, 0.25 * dt * dt, L)
        rhs = 2.0 * (M @ v_n) - a @ v_n - dt * (L.T @ s_n)
        v_next = _solver(model, solver).solve_spd(a, rhs, x0=v_n)
        s_next = s_n + dt * m_c.solve(L @ (0.5 * (v_n + v_next)))
        return q_half, v_next, s_next
    h = 0.5 * dt
    nv = v_n.shape[0]
    rhs = np.concatenate([M @ v_n - h * (L.T @ s_n), m_c.matvec(s_n) + h * (L @ v_n)])
    if sp.issparse(L):
        a = sp.bmat([[M, h * L.T], [-h * L, m_c.to_sparse()]], format="csc")
    else:
        a = np.block([[M, h * L.T], [-h * L, m_c.toarray()]])
    x = _solve_equilibrated(a, rhs)
    return q_half, x[:nv], x[nv:]


def _dg_residual(model, q, v, s0, d, dt):
    M = model.mass.m_rho
    q1 = q + d
    qm = q + 0.5 * d
    s1 = model.stress_from_q(q1)
    sh = 0.5 * (s0 + s1)
    Lm = model.L(qm)
    r = M @ (2.0 * d / dt - 2.0 * v) / dt + Lm.T @ sh
    return r, q1, qm, s1, sh, Lm


def _dg_fd_jacobian(model, q, v, s0, d, dt, eps=1e-6):
    n = d.shape[0]
    jac = np.empty((n, n))
    h = eps * (1.0 + np.linalg.norm(d))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        rp = _dg_residual(model, q, v, s0, d + e, dt)[0]
        rm = _dg_residual(model, q, v, s0, d - e, dt)[0]
        jac[:, j] = (rp - rm) / (2 * h)
    return jac


def dg_jacobian(model, q, v, s0, d, dt):
    """Analytic Jacobian of the discrete-gradient residual with respect to ``q_{n+1}``."""
    M = model.mass.m_rho
    _, q1, qm, s1, sh, Lm = _dg_residual(model, q, v, s0, d, dt)
    kgeo = model.geometric_stiffness(qm, sh)
    kt = model.tangent_stiffness(qm, q1, L_left=Lm)
    return (2.0 / (dt * dt)) * M + 0.5 * kgeo + 0.5 * kt


def step_discrete_gradient(model: PoissonModel, q_n, v_n, dt, newton_tol: float = 1e-12,
                           newton_max_iter: int = 25, s_n=None, solver: LinearSolver | None = None,
                           jacobian: str = "analytic"):
    """Averaged-stress midpoint step ``(q_n, v_n) -> (q_{n+1}, v_{n+1}, s_{n+1}, info)``.

    Newton iterates on the increment ``d = q_{n+1} - q_n`` until the momentum
    residual drops below ``newton_tol`` times the force scale of the step.
    """
    solver = _solver(model, solver)
    M = model.mass.m_rho
    s0 = model.stress_from_q(q_n) if s_n is None else s_n
    f0 = -(model.L(q_n).T @ s0)
    scale = np.linalg.norm(M @ v_n) / dt + np.linalg.norm(f0)
    d = dt * v_n + 0.5 * dt * dt * solver.solve_mass(f0)
    history = []
    last_step = np.inf
    for it in range(newton_max_iter + 1):
        r, q1, qm, s1, sh, Lm = _dg_residual(model, q_n, v_n, s0, d, dt)
        rn = float(np.linalg.norm(r))
        history.append(rn)
        if rn <= newton_tol * scale or last_step <= 1e-15 * np.linalg.norm(d):
            return q1, 2.0 * d / dt - v_n, s1, NewtonInfo(it, history)
        if it == newton_max_iter:
            break
        if jacobian == "fd":
            jac = _dg_fd_jacobian(model, q_n, v_n, s0, d, dt)
        else:
            kgeo = model.geometric_stiffness(qm, sh)
            kt = model.tangent_stiffness(qm, q1, L_left=Lm)
            jac = (2.0 / (dt * dt)) * M + 0.5 * kgeo + 0.5 * kt
        delta = _solve_general(jac, -r)
        d = d + delta
        last_step = np.linalg.norm(delta)
    raise StepFailure(f"Newton did not converge in {newton_max_iter} iterations", residuals=history)


@dataclass
class RunRecord:
    scheme: str
    dt: float
    n_steps: int
    energy: np.ndarray
    sample_steps: np.ndarray
    q: np.ndarray
    v: np.ndarray
    s: np.ndarray | None = None
    observed: dict = field(default_factory=dict)
    wall_time: float = 0.0
    failure: dict | None = None

    @property
    def times(self) -> np.ndarray:
        return self.sample_steps * self.dt

    @property
    def stable(self) -> bool:
        return self.failure is None

    @property
    def steps_done(self) -> int:
        return self.energy.size - 1


def _blown_up(e, e0):
    return not np.isfinite(e) or (e0 > 0 and e > BLOWUP_FACTOR * e0)


def run(model: PoissonModel, config: SchemeConfig, initial_state: PoissonState, observers=None,
        sample_every: int | None = 1, sample_steps=None, record_stress: bool = False,
        fast: bool = True, solver_block: int = 1) -> RunRecord:
    """Integrate ``config.n_steps`` steps from ``initial_state``.

    Energy is recorded every step.  Fields ``(q_n, v_n[, s_n])`` are stored at
    every ``sample_every``-th step and at the explicit ``sample_steps``.
    ``observers`` maps names to callables ``f(q_n, v_n, s_n)`` evaluated every
    step.  Leapfrog blow-up (non-finite state or energy above ``1e6 H_0``)
    ends the run early and is reported in ``failure``; Newton failure of the
    discrete gradient raises `StepFailure`.
    """
    n_steps = config.n_steps
    dt = config.dt
    want = np.zeros(n_steps + 1, dtype=bool)
    if sample_every:
        want[::sample_every] = True
        want[n_steps] = True
    if sample_steps is not None:
        idx = np.asarray(list(sample_steps), dtype=int)
        want[idx[(idx >= 0) & (idx <= n_steps)]] = True
    observers = observers or {}

    if (fast and model.n_q <= FAST_MAX_DOFS and isinstance(model.coupling, AffineCoupling)
            and not observers and not record_stress and config.backend == "direct"):
        return _run_small(model, config, initial_state, want)

    solver = LinearSolver(model, config.backend, config.cg_tol, solver_block)
    q0 = np.array(initial_state.q, dtype=float)
    v = np.array(initial_state.v, dtype=float)
    s = np.array(initial_state.s, dtype=float)
    energies = np.empty(n_steps + 1)
    samples_q, samples_v, samples_s, steps = [], [], [], []
    obs = {name: [] for name in observers}
    failure = None

    def record(n, q_rep, v_n, s_n, e):
        energies[n] = e
        if want[n]:
            steps.append(n)
            samples_q.append(q_rep.copy())
            samples_v.append(v_n.copy())
            if record_stress:
                samples_s.append(s_n.copy())
        for name, fn in observers.items():
            obs[name].append(np.asarray(fn(q_rep, v_n, s_n), dtype=float))

    scheme = config.scheme
    t0 = time.perf_counter()
    if scheme == "discrete_gradient":
        q = q0
        s = model.stress_from_q(q)
        record(0, q, v, s, _kinetic(model, v) + _potential_from_stress(model, s))
        e0 = energies[0]
        for n in range(1, n_steps + 1):
            try:
                q, v, s, _ = step_discrete_gradient(model, q, v, dt, config.newton_tol, config.newton_max_iter,
                                                    s_n=s, solver=solver)
            except StepFailure as exc:
                exc.step, exc.time = n, n * dt
                raise
            e = _kinetic(model, v) + _potential_from_stress(model, s)
            record(n, q, v, s, e)
            if _blown_up(e, e0):
                failure = {"step": n, "time": n * dt, "reason": "energy blow-up"}
                break
    else:
        q_half = init_half_step(model, q0, v, dt, solver)
        if scheme == "linearly_implicit":
            e_init = model.energy(PoissonState(q0, v, s))
        else:
            e_init = _kinetic(model, v) + model.potential(q0)
        record(0, q0, v, s if scheme == "linearly_implicit" else model.stress_from_q(q0), e_init)
        e0 = energies[0]
        q_prev = q_half - dt * v
        for n in range(1, n_steps + 1):
            if scheme == "leapfrog":
                q_prev, v = step_leapfrog(model, q_prev, v, dt, solver)
                q_rep = q_prev + 0.5 * dt * v
                s = model.stress_from_q(q_rep)
                e = _kinetic(model, v) + _potential_from_stress(model, s)
            else:
                q_prev, v, s = step_linearly_implicit(model, q_prev, v, s, dt, config.condensed, solver)
                q_rep = q_prev + 0.5 * dt * v
                e = model.energy(PoissonState(q_rep, v, s))
            finite = bool(np.all(np.isfinite(v)) and np.all(np.isfinite(q_rep)))
            if not finite or _blown_up(e, e0):
                energies[n] = e if np.isfinite(e) else np.inf
                failure = {"step": n, "time": n * dt, "reason": "non-finite state" if not finite else "energy blow-up"}
                break
            record(n, q_rep, v, s, e)
    wall = time.perf_counter() - t0
    done = failure["step"] if failure else n_steps
    return RunRecord(
        scheme=scheme, dt=dt, n_steps=n_steps, energy=energies[: done + 1].copy(),
        sample_steps=np.asarray(steps, dtype=int),
        q=np.array(samples_q).reshape(len(steps), q0.size), v=np.array(samples_v).reshape(len(steps), q0.size),
        s=np.array(samples_s) if record_stress else None,
        observed={k: np.array(vals) for k, vals in obs.items()}, wall_time=wall, failure=failure,
    )


def _kinetic(model, v):
    return 0.5 * float(v @ (model.mass.m_rho @ v))


def _potential_from_stress(model, s):
    return 0.5 * float(s @ model.mass.m_c.matvec(s))


def _csr(m):
    m = sp.csr_matrix(m)
    m.sort_indices()
    return m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(float)


def _run_small(model, config, state, want):
    c = model.coupling
    m_rho = model.mass.m_rho
    M = m_rho.toarray() if sp.issparse(m_rho) else np.asarray(m_rho, dtype=float)
    M_inv = np.linalg.inv(M)
    Mc = _csr(model.mass.m_c.to_sparse())
    Mc_inv = _csr(model.mass.m_c.inverse_sparse())
    rows = c.rows.astype(np.int64)
    cols = c.cols.astype(np.int64)
    rp = np.searchsorted(rows, np.arange(c.shape[0] + 1)).astype(np.int64)
    lp, li, lx = _csr(c.lin)
    geo = (rows, cols, rp, c.const.astype(float), lp, li, lx)
    q0 = np.array(state.q, dtype=float)
    v0 = np.array(state.v, dtype=float)
    s0 = np.array(state.s, dtype=float)
    n = config.n_steps
    t0 = time.perf_counter()
    if config.scheme == "leapfrog":
        q, v, e, done, status = _kernels.run_leapfrog(M, M_inv, Mc, Mc_inv, *geo, q0, v0, config.dt, n, BLOWUP_FACTOR)
    elif config.scheme == "linearly_implicit":
        q, v, e, done, status = _kernels.run_linearly_implicit(M, M_inv, Mc, Mc_inv, *geo, q0, v0, s0,
                                                               config.dt, n, BLOWUP_FACTOR)
    else:
        q, v, e, done, status = _kernels.run_discrete_gradient(M, M_inv, Mc, Mc_inv, *geo, q0, v0, config.dt, n,
                                                               config.newton_tol, config.newton_max_iter)
    wall = time.perf_counter() - t0
    if status == 2:
        raise StepFailure("Newton did not converge", step=int(done), time=done * config.dt)
    failure = None
    last = n
    if status == 1:
        failure = {"step": int(done), "time": done * config.dt, "reason": "energy blow-up"}
        last = int(done) - 1
    steps = np.flatnonzero(want[: last + 1])
    return RunRecord(
        scheme=config.scheme, dt=config.dt, n_steps=n, energy=e[: (done if status == 1 else n) + 1].copy(),
        sample_steps=steps, q=q[steps].copy(), v=v[steps].copy(), wall_time=wall, failure=failure,
    )
