import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from geonl.fem1d import (
    BeamParams, Mesh1D, apply_beam_bcs, assemble_beam, assemble_wave_bar, beam_initial_state, gauss_legendre,
    hermite_basis, lagrange_basis, legendre_values,
)
from geonl.poisson import ConfigurationError


@pytest.fixture(scope="module")
def beam():
    params = BeamParams()
    full = assemble_beam(params=params)
    return params, full, apply_beam_bcs(full)


def test_mesh_basics():
    m = Mesh1D(5, 2.0)
    assert m.h == 0.4 and m.n_nodes == 6
    assert np.all(np.diff(m.nodes) > 0)
    with pytest.raises(ConfigurationError):
        Mesh1D(0)


def test_gauss_rule_exactness():
    x, w = gauss_legendre(5)
    for p in range(10):
        assert np.sum(w * x**p) == pytest.approx(1.0 / (p + 1), rel=1e-14)


def test_lagrange_partition_of_unity():
    xi = np.linspace(0, 1, 7)
    for k in (1, 2, 3):
        vals, ders = lagrange_basis(k, xi)
        np.testing.assert_allclose(vals.sum(axis=0), 1.0, atol=1e-14)
        np.testing.assert_allclose(ders.sum(axis=0), 0.0, atol=1e-12)


def test_hermite_interpolates_cubics():
    h = 0.3
    xi = np.linspace(0, 1, 9)
    f = lambda x: 2 - x + 3 * x**2 - 4 * x**3
    df = lambda x: -1 + 6 * x - 12 * x**2
    dofs = np.array([f(0.0), df(0.0), f(h), df(h)])
    n, d1, d2 = hermite_basis(xi, h)
    x = xi * h
    np.testing.assert_allclose(dofs @ n, f(x), atol=1e-13)
    np.testing.assert_allclose(dofs @ d1, df(x), atol=1e-12)
    np.testing.assert_allclose(dofs @ d2, 6 - 24 * x, atol=1e-11)


def test_bar_stress_mass_scaled_identity():
    mesh = Mesh1D(10, 1.0)
    ea = 70e9 * 4e-6
    _, m_ca, _ = assemble_wave_bar(mesh, 2700.0, 4e-6, 70e9, k=1)
    np.testing.assert_allclose(m_ca.toarray(), (mesh.h / ea) * np.eye(10), rtol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_bar_constants_in_kernel(k):
    _, _, d = assemble_wave_bar(Mesh1D(7), 1.0, 1.0, 1.0, k=k)
    assert np.max(np.abs(d @ np.ones(d.shape[1]))) <= 1e-13


def test_bar_stiffness_decomposition():
    mesh = Mesh1D(12, 1.5)
    rho, area, young = 2700.0, 4e-6, 70e9
    _, m_ca, d = assemble_wave_bar(mesh, rho, area, young, k=1)
    k = (d.T @ m_ca.inverse_sparse() @ d).toarray()
    n = mesh.n_nodes
    classical = young * area / mesh.h * (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1))
    classical[0, 0] = classical[-1, -1] = young * area / mesh.h
    assert np.max(np.abs(k - classical)) <= 1e-12 * np.max(np.abs(classical))


def test_bar_mass_total():
    mesh = Mesh1D(9, 3.0)
    mass, _, _ = assemble_wave_bar(mesh, 2.0, 0.5, 1.0, k=2)
    one = np.ones(mass.shape[0])
    assert one @ mass @ one == pytest.approx(2.0 * 0.5 * 3.0, rel=1e-14)


def test_bar_rejects_order_zero():
    with pytest.raises(ConfigurationError):
        assemble_wave_bar(Mesh1D(3), 1.0, 1.0, 1.0, k=0)


def test_beam_parameters():
    p = BeamParams()
    assert p.area == 4e-6 and p.inertia == pytest.approx(16e-12 / 12, rel=1e-15)
    assert p.a_z == p.side
    assert p.bending_period == pytest.approx(2 / math.pi * math.sqrt(2700 * 4e-6 / (70e9 * 16e-12 / 12)), rel=1e-15)
    assert p.t_end == pytest.approx(5 * p.bending_period, rel=1e-15)
    with pytest.raises(ConfigurationError):
        BeamParams(young=-1.0)


def test_beam_stress_block_sizes(beam):
    _, full, _ = beam
    assert full.mass.m_c.block_sizes == [5, 2]
    assert full.n_s == 50 * 7


def test_beam_mass_symmetry(beam):
    _, full, reduced = beam
    for m in (full.mass.m_rho, reduced.mass.m_rho):
        assert abs(m - m.T).max() <= 1e-14 * abs(m).max()


def test_beam_quadrature_five_vs_eight(beam):
    params, full, _ = beam
    other = assemble_beam(params=params, n_quad=8)
    rng = np.random.default_rng(0)
    q = 1e-3 * rng.standard_normal(full.n_q)
    for a, b in ((full.L(q), other.L(q)), (full.mass.m_rho, other.mass.m_rho)):
        assert abs(a - b).max() <= 1e-13 * abs(b).max()
    np.testing.assert_allclose(full.strain(q), other.strain(q), rtol=1e-13, atol=1e-13 * np.abs(other.strain(q)).max())


def test_beam_zero_transverse_decouples(beam):
    _, full, _ = beam
    q = np.zeros(full.n_q)
    q[: full.n_x] = np.random.default_rng(1).standard_normal(full.n_x)
    L = full.L(q)
    assert abs(L - full.coupling.constant_part()).max() == 0.0


def test_beam_axial_strain_of_first_mode(beam):
    params, full, _ = beam
    st0 = beam_initial_state(params, full)
    g = full.strain(st0.q)
    # the zeroth Legendre moments of N sum to the integral of (q_z')^2 / 2
    total = g[: 5 * full.mesh.n_el : 5].sum()
    assert total > 0
    assert total == pytest.approx(params.a_z**2 * math.pi**2 / (4 * params.length), rel=1e-6)


def test_beam_directional_derivative(beam):
    params, _, reduced = beam
    rng = np.random.default_rng(2)
    q = beam_initial_state(params, reduced).q + 1e-4 * rng.standard_normal(reduced.n_q)
    w = rng.standard_normal(reduced.n_q)
    eps = 1e-5 * (np.linalg.norm(q) + 1)
    fd = (reduced.strain(q + eps * w) - reduced.strain(q - eps * w)) / (2 * eps)
    lw = reduced.L(q) @ w
    assert np.linalg.norm(fd - lw) <= 1e-6 * np.linalg.norm(lw)


def test_dg4_projection_sufficiency():
    """The axial strain of any Hermite/CG_1 field is a quartic per element and is reproduced by DG_4."""
    params = BeamParams(n_el=6)
    model = assemble_beam(params=params)
    rng = np.random.default_rng(3)
    q = rng.standard_normal(model.n_q)
    g = model.strain(q)[: 5 * 6].reshape(6, 5)
    h = model.mesh.h
    xi = np.linspace(0, 1, 13)
    leg = legendre_values(4, xi)
    _, dphi = lagrange_basis(1, xi)
    _, d1, _ = hermite_basis(xi, h)
    for e in range(6):
        qx = q[[e, e + 1]]
        qz = q[model.n_x + 2 * e: model.n_x + 2 * e + 4]
        eps = qx @ dphi / h + 0.5 * (qz @ d1) ** 2
        coeff = g[e] * (2 * np.arange(5) + 1) / h
        assert np.max(np.abs(coeff @ leg - eps)) <= 1e-13 * max(1.0, np.max(np.abs(eps)))


def test_bc_dof_count(beam):
    params, _, reduced = beam
    n = params.n_el
    assert reduced.n_q == (n + 1 - 2) + (2 * (n + 1) - 2) == 149


def test_bc_unknown_name(beam):
    _, full, _ = beam
    with pytest.raises(ConfigurationError):
        apply_beam_bcs(full, "pinned")


def test_bc_reduced_bending_operator_positive(beam):
    _, _, reduced = beam
    k = reduced.condensed_stiffness(np.zeros(reduced.n_q))
    k = k.toarray() if hasattr(k, "toarray") else k
    lam = sla.eigh(k, reduced.mass.m_rho.toarray(), eigvals_only=True)
    assert lam[0] > 0


def test_bc_free_has_rigid_modes(beam):
    _, full, _ = beam
    free = apply_beam_bcs(full, "free")
    k = free.condensed_stiffness(np.zeros(free.n_q))
    k = k.toarray() if hasattr(k, "toarray") else k
    lam = sla.eigh(k, free.mass.m_rho.toarray(), eigvals_only=True)
    # axial translation, vertical translation and rotation
    assert np.sum(np.abs(lam) <= 1e-12 * lam[-1]) == 3


def test_bc_clamped_count(beam):
    params, full, _ = beam
    assert apply_beam_bcs(full, "clamped").n_q == 149 - 2


def test_bc_forces_restricted(beam):
    params, full, reduced = beam
    st_full = beam_initial_state(params, full)
    f_full = full.rhs_force(st_full.q)
    f_red = reduced.rhs_force(st_full.q[reduced.keep])
    np.testing.assert_allclose(f_red, f_full[reduced.keep], rtol=1e-12, atol=1e-12 * np.abs(f_full).max())


def test_initial_state_dofs(beam):
    params, _, reduced = beam
    st0 = beam_initial_state(params, reduced)
    full = reduced.embed(st0.q)
    _, wz, sz = reduced.node_dofs()
    assert full[wz[25]] == pytest.approx(params.a_z, rel=1e-15)
    assert full[sz[0]] == pytest.approx(params.a_z * math.pi / params.length, rel=1e-15)
    assert full[sz[-1]] == pytest.approx(-params.a_z * math.pi / params.length, rel=1e-15)
    assert np.all(full[: reduced.n_x] == 0) and np.all(st0.v == 0)


def test_initial_energy_closed_form(beam):
    params, _, reduced = beam
    st0 = beam_initial_state(params, reduced)
    k = math.pi / params.length
    a = params.a_z
    bending = 0.5 * params.young * params.inertia * a**2 * k**4 * params.length / 2
    axial = 0.5 * params.young * params.area * (0.25 * a**4 * k**4) * 3 * params.length / 8
    assert reduced.energy(st0) == pytest.approx(bending + axial, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_beam_coupling_homogeneous_in_transverse_property(seed):
    """``L(q) - L(0)`` is linear in ``q_z`` and independent of ``q_x``."""
    model = assemble_beam(params=BeamParams(n_el=5))
    rng = np.random.default_rng(seed)
    q1, q2 = rng.standard_normal(model.n_q), rng.standard_normal(model.n_q)
    l0 = model.coupling.constant_part()
    d = lambda q: (model.L(q) - l0).toarray()
    np.testing.assert_allclose(d(q1 + 2 * q2), d(q1) + 2 * d(q2), atol=1e-10 * np.abs(d(q1)).max())
    qx = q1.copy()
    qx[: model.n_x] = 0
    np.testing.assert_allclose(d(q1), d(qx), atol=0)
