import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geonl.duffing import duffing_system
from geonl.fem1d import BeamParams, Mesh1D, apply_beam_bcs, assemble_beam, beam_initial_state
from geonl.integrators import (
    SchemeConfig, StepFailure, canonical_scheme, dg_jacobian, init_half_step, run, step_discrete_gradient,
    step_leapfrog, step_linearly_implicit, _dg_fd_jacobian, _dg_residual,
)
from geonl.poisson import ConfigurationError, PoissonState, j_matrix

from conftest import FreeParticle, LinearOscillator

DT = 0.278e-3


@pytest.fixture(scope="module")
def duffing():
    return duffing_system()


@pytest.fixture(scope="module")
def small_beam():
    params = BeamParams(n_el=4)
    model = apply_beam_bcs(assemble_beam(Mesh1D(4), params))
    return params, model


def reverse(q_half, v, dt):
    return q_half + dt * v, -v


# configuration

def test_scheme_aliases():
    assert canonical_scheme("lf") == "leapfrog"
    assert canonical_scheme("li") == "linearly_implicit"
    assert canonical_scheme("dg") == "discrete_gradient"
    with pytest.raises(ConfigurationError):
        canonical_scheme("rk4")


@pytest.mark.parametrize("kw", [
    {"dt": 0.0, "t_end": 1.0},
    {"dt": -1e-3, "t_end": 1.0},
    {"dt": 1.0, "t_end": 0.5},
    {"dt": 1e-3, "t_end": 1.0, "newton_tol": 0.0},
    {"dt": 1e-3, "t_end": 1.0, "newton_tol": 1e-3},
    {"dt": 1e-3, "t_end": 1.0, "newton_max_iter": 0},
    {"dt": 1e-3, "t_end": 1.0, "backend": "lu"},
])
def test_scheme_config_rejects(kw):
    with pytest.raises(ConfigurationError):
        SchemeConfig(**kw)


def test_scheme_config_step_count():
    assert SchemeConfig(dt=0.1, t_end=1.0).n_steps == 10
    assert SchemeConfig(dt=1.0, t_end=1.0).n_steps == 1


# initial half step

def test_init_half_step_duffing(duffing):
    q_half = init_half_step(duffing, np.array([10.0]), np.zeros(1), DT)
    assert q_half[0] == pytest.approx(10.0 - 637.5 * DT**2, rel=1e-15)


def test_init_half_step_equilibrium(duffing):
    np.testing.assert_array_equal(init_half_step(duffing, np.zeros(1), np.zeros(1), DT), [0.0])


def test_init_half_step_harmonic_taylor():
    osc = LinearOscillator(2.0)
    dt = 1e-3
    q_half = init_half_step(osc, np.array([1.0]), np.array([0.5]), dt)
    t = dt / 2
    exact = np.cos(2 * t) + 0.25 * np.sin(2 * t)
    assert abs(q_half[0] - exact) <= 2.0 * t**3


# leapfrog

def test_leapfrog_free_particle():
    model = FreeParticle(3)
    q, v = np.zeros(3), np.array([1.0, -2.0, 0.5])
    q_half = init_half_step(model, q, v, 0.1)
    for _ in range(10):
        q_half, v = step_leapfrog(model, q_half, v, 0.1)
    np.testing.assert_allclose(q_half - 0.05 * v, [1.0, -2.0, 0.5], rtol=1e-14)
    np.testing.assert_array_equal(v, [1.0, -2.0, 0.5])


def test_leapfrog_harmonic_energy_bounded():
    osc = LinearOscillator(1.0)
    rec = run(osc, SchemeConfig(dt=0.1, t_end=1000.0, scheme="lf"), osc.state(1.0))
    e = rec.energy
    assert rec.stable and np.max(np.abs(e - e[0])) / e[0] <= 0.1**2


def test_leapfrog_reversibility(duffing):
    q_half = init_half_step(duffing, np.array([10.0]), np.zeros(1), DT)
    v = np.zeros(1)
    start = (q_half.copy(), v.copy())
    for _ in range(1000):
        q_half, v = step_leapfrog(duffing, q_half, v, DT)
    q_half, v = reverse(q_half, v, DT)
    for _ in range(1000):
        q_half, v = step_leapfrog(duffing, q_half, v, DT)
    q_half, v = reverse(q_half, v, DT)
    assert abs(q_half[0] - start[0][0]) <= 1e-12 * 10.0
    assert abs(v[0] - start[1][0]) <= 1e-12 * 10.0 * duffing.params.omega0


def test_leapfrog_reversibility_beam(small_beam):
    params, model = small_beam
    st0 = beam_initial_state(params, model)
    dt = params.dt_base / 8
    q_half = init_half_step(model, st0.q, st0.v, dt)
    v = st0.v.copy()
    pair_ref = np.concatenate([q_half - dt * v, q_half])
    for _ in range(200):
        q_half, v = step_leapfrog(model, q_half, v, dt)
    q_half, v = reverse(q_half, v, dt)
    for _ in range(200):
        q_half, v = step_leapfrog(model, q_half, v, dt)
    q_half, v = reverse(q_half, v, dt)
    pair = np.concatenate([q_half - dt * v, q_half])
    assert np.linalg.norm(pair - pair_ref) <= 1e-12 * np.linalg.norm(pair_ref)


# linearly implicit

def test_li_one_step_is_cayley(duffing):
    st0 = duffing.initial_state()
    q_prev = init_half_step(duffing, st0.q, st0.v, DT) - DT * st0.v
    q_half, v1, s1 = step_linearly_implicit(duffing, q_prev, st0.v, st0.s, DT)
    h = duffing.mass.toarray()
    j = j_matrix(duffing.coupling, q_half)
    x0 = np.concatenate([st0.v, st0.s])
    x1 = np.linalg.solve(h - 0.5 * DT * j, (h + 0.5 * DT * j) @ x0)
    np.testing.assert_allclose(np.concatenate([v1, s1]), x1, rtol=1e-13, atol=1e-12)


def test_li_energy_exact_duffing(duffing):
    rec = run(duffing, SchemeConfig(dt=DT, t_end=2000 * DT, scheme="li"), duffing.initial_state())
    assert np.max(np.abs(rec.energy - 13000.0)) / 13000.0 <= 1e-12


def _condensed_vs_monolithic(model, state, dt, n_steps):
    q_prev = init_half_step(model, state.q, state.v, dt) - dt * state.v
    v, s = state.v.copy(), state.s.copy()
    worst = 0.0
    for _ in range(n_steps):
        qa, va, sa = step_linearly_implicit(model, q_prev, v, s, dt, condensed=True)
        qb, vb, sb = step_linearly_implicit(model, q_prev, v, s, dt, condensed=False)
        xa, xb = np.concatenate([va, sa]), np.concatenate([vb, sb])
        worst = max(worst, np.linalg.norm(xa - xb) / np.linalg.norm(xb))
        q_prev, v, s = qa, va, sa
    return worst


def test_condensed_equals_monolithic_duffing(duffing):
    assert _condensed_vs_monolithic(duffing, duffing.initial_state(), DT, 100) <= 1e-12


def test_condensed_equals_monolithic_beam(small_beam):
    params, model = small_beam
    assert _condensed_vs_monolithic(model, beam_initial_state(params, model), params.dt_base, 100) <= 1e-12


def test_condensed_equals_monolithic_column(small_column):
    from geonl.fem3d import column_initial_state

    params, model = small_column
    st0 = column_initial_state(params, model)
    assert _condensed_vs_monolithic(model, st0, params.dt_base, 100) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-5, 1e-2), st.floats(-12.0, 12.0), st.floats(-300.0, 300.0))
def test_li_step_conserves_energy_property(duffing, dt, q0, v0):
    q = np.array([q0])
    v = np.array([v0])
    s = duffing.stress_from_q(q)
    e0 = duffing.energy(PoissonState(q, v, s))
    q_prev = init_half_step(duffing, q, v, dt) - dt * v
    q_half, v1, s1 = step_linearly_implicit(duffing, q_prev, v, s, dt)
    e1 = duffing.energy(PoissonState(q_half + 0.5 * dt * v1, v1, s1))
    assert abs(e1 - e0) <= 1e-12 * max(e0, 1e-300)


# discrete gradient

def test_dg_energy_duffing(duffing):
    rec = run(duffing, SchemeConfig(dt=DT, t_end=2000 * DT, scheme="dg"), duffing.initial_state(), fast=False)
    assert np.max(np.abs(rec.energy - 13000.0)) / 13000.0 <= 1e-10


def test_dg_linear_is_midpoint():
    osc = LinearOscillator(3.0)
    dt = 0.05
    q1, v1, _, _ = step_discrete_gradient(osc, np.array([1.0]), np.array([0.2]), dt)
    a = np.array([[1.0, -dt / 2], [9.0 * dt / 2, 1.0]])
    b = np.array([[1.0, dt / 2], [-9.0 * dt / 2, 1.0]]) @ np.array([1.0, 0.2])
    np.testing.assert_allclose([q1[0], v1[0]], np.linalg.solve(a, b), rtol=1e-13)


def test_dg_duffing_residual_closed_form(duffing):
    q0, d, dt = np.array([10.0]), np.array([-0.04]), DT
    v0 = np.zeros(1)
    q1 = q0 + d
    pot = lambda q: 5.0 * q**2 + 1.25 * q**4
    # averaged stress gives the exact discrete gradient of the quartic potential
    dv = (pot(q1[0]) - pot(q0[0])) / d[0]
    r_expected = (2 * d[0] / dt - 2 * v0[0]) / dt + dv
    r = _dg_residual(duffing, q0, v0, duffing.stress_from_q(q0), d, dt)[0]
    assert r[0] == pytest.approx(r_expected, rel=1e-13)


def test_dg_analytic_jacobian_matches_fd(small_beam):
    params, model = small_beam
    st0 = beam_initial_state(params, model)
    rng = np.random.default_rng(11)
    q = st0.q + 1e-4 * rng.standard_normal(model.n_q)
    v = rng.standard_normal(model.n_q)
    d = params.dt_base * v
    s0 = model.stress_from_q(q)
    ja = dg_jacobian(model, q, v, s0, d, params.dt_base)
    ja = ja.toarray() if hasattr(ja, "toarray") else np.asarray(ja)
    jf = _dg_fd_jacobian(model, q, v, s0, d, params.dt_base)
    assert np.linalg.norm(ja - jf) <= 1e-6 * np.linalg.norm(ja)


def test_dg_newton_converges_quadratically(duffing):
    _, _, _, info = step_discrete_gradient(duffing, np.array([10.0]), np.zeros(1), DT)
    assert info.iterations <= 5
    r = info.residuals
    assert r[-1] < 1e-6 * r[0]


def test_dg_newton_budget_raises_with_history(duffing):
    with pytest.raises(StepFailure) as info:
        step_discrete_gradient(duffing, np.array([10.0]), np.array([50.0]), 5e-2, newton_max_iter=1)
    assert len(info.value.residuals) == 2 and info.value.residuals[0] > 0


def test_dg_fd_jacobian_option(duffing):
    qa = step_discrete_gradient(duffing, np.array([10.0]), np.zeros(1), DT)[0]
    qb = step_discrete_gradient(duffing, np.array([10.0]), np.zeros(1), DT, jacobian="fd")[0]
    assert qa[0] == pytest.approx(qb[0], rel=1e-13)


# run driver

@pytest.mark.parametrize("scheme", ["lf", "li", "dg"])
def test_run_single_step(duffing, scheme):
    rec = run(duffing, SchemeConfig(dt=DT, t_end=DT, scheme=scheme), duffing.initial_state())
    assert rec.n_steps == 1 and rec.energy.shape == (2,) and list(rec.sample_steps) == [0, 1]


@pytest.mark.parametrize("scheme", ["lf", "li", "dg"])
def test_run_zero_state(duffing, scheme):
    st0 = PoissonState(np.zeros(1), np.zeros(1), np.zeros(2))
    rec = run(duffing, SchemeConfig(dt=DT, t_end=50 * DT, scheme=scheme), st0)
    np.testing.assert_array_equal(rec.energy, np.zeros(51))
    np.testing.assert_array_equal(rec.q, np.zeros((51, 1)))


@pytest.mark.parametrize("scheme", ["lf", "li", "dg"])
def test_fast_path_matches_generic_duffing(duffing, scheme):
    cfg = SchemeConfig(dt=DT, t_end=500 * DT, scheme=scheme)
    a = run(duffing, cfg, duffing.initial_state(), fast=True)
    b = run(duffing, cfg, duffing.initial_state(), fast=False)
    np.testing.assert_allclose(a.q, b.q, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a.v, b.v, rtol=1e-10, atol=1e-9)
    np.testing.assert_allclose(a.energy, b.energy, rtol=1e-11)


@pytest.mark.parametrize("scheme", ["lf", "li", "dg"])
def test_fast_path_matches_generic_beam(small_beam, scheme):
    params, model = small_beam
    st0 = beam_initial_state(params, model)
    cfg = SchemeConfig(dt=params.dt_base / 8, t_end=100 * params.dt_base / 8, scheme=scheme)
    a = run(model, cfg, st0, fast=True)
    b = run(model, cfg, st0, fast=False)
    assert np.max(np.abs(a.q - b.q)) <= 1e-10 * np.max(np.abs(b.q))
    assert np.max(np.abs(a.v - b.v)) <= 1e-8 * np.max(np.abs(b.v))


def test_run_sampling_and_observers(duffing):
    cfg = SchemeConfig(dt=DT, t_end=20 * DT, scheme="li")
    rec = run(duffing, cfg, duffing.initial_state(), sample_every=None, sample_steps=[0, 5, 20, 99],
              observers={"q": lambda q, v, s: q}, record_stress=True)
    assert list(rec.sample_steps) == [0, 5, 20]
    assert rec.s.shape == (3, 2) and rec.observed["q"].shape == (21, 1)
    np.testing.assert_allclose(rec.observed["q"][[0, 5, 20]], rec.q)


def test_run_detects_blowup():
    osc = LinearOscillator(1.0)
    rec = run(osc, SchemeConfig(dt=2.5, t_end=2.5 * 200, scheme="lf"), osc.state(1.0))
    assert not rec.stable and rec.failure["step"] < 200
    assert rec.energy.size == rec.failure["step"] + 1


def test_run_blowup_generic_path():
    osc = LinearOscillator(1.0)
    rec = run(osc, SchemeConfig(dt=2.5, t_end=2.5 * 200, scheme="lf"), osc.state(1.0), fast=False)
    assert not rec.stable and rec.q.shape[0] == rec.failure["step"]


def test_li_stable_beyond_leapfrog_limit():
    osc = LinearOscillator(1.0)
    rec = run(osc, SchemeConfig(dt=2.5, t_end=2.5 * 200, scheme="li"), osc.state(1.0))
    assert rec.stable and np.max(np.abs(rec.energy - 0.5)) <= 1e-13
