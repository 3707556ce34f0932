"""One-dimensional meshes, spaces and assembly for the bar and the von Karman beam.

Velocity spaces are CG_k (Lagrange) and C^1 cubic Hermite; stress spaces
are DG_k with a Legendre basis on every element, so their mass matrices are
diagonal.  Hermite shape functions live on the unit interval with the two
slope functions multiplied by ``h``; the global dofs are nodal values and
nodal slopes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre as npleg

from .poisson import AffineCoupling, BlockMass, ConfigurationError, PoissonModel, PoissonState
from .solvers import BlockDiagonal


@dataclass(frozen=True)
class Mesh1D:
    n_el: int
    length: float = 1.0

    def __post_init__(self):
        if self.n_el < 1 or not self.length > 0:
            raise ConfigurationError(f"invalid mesh: n_el={self.n_el}, length={self.length}")

    @property
    def h(self) -> float:
        return self.length / self.n_el

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n_el + 1)

    @property
    def n_nodes(self) -> int:
        return self.n_el + 1


def gauss_legendre(n_points: int):
    """Points and weights on the unit interval [0, 1]."""
    x, w = npleg.leggauss(n_points)
    return 0.5 * (x + 1.0), 0.5 * w


def legendre_values(k_max: int, xi) -> np.ndarray:
    """``P_k(2 xi - 1)`` for ``k = 0..k_max``; shape ``(k_max + 1, len(xi))``."""
    t = 2.0 * np.asarray(xi) - 1.0
    return np.array([npleg.legval(t, np.eye(k_max + 1)[k]) for k in range(k_max + 1)])


def lagrange_basis(k: int, xi):
    """Equispaced CG_k shape functions on [0, 1]: values and d/dxi, shape ``(k+1, nq)``.

    Local order: left vertex, right vertex, then interior nodes left to right.
    """
    nodes = np.concatenate([[0.0, 1.0], np.linspace(0.0, 1.0, k + 1)[1:-1]])
    xi = np.asarray(xi, dtype=float)
    vals = np.ones((k + 1, xi.size))
    ders = np.zeros((k + 1, xi.size))
    for a in range(k + 1):
        others = [nodes[b] for b in range(k + 1) if b != a]
        denom = np.prod([nodes[a] - o for o in others])
        vals[a] = np.prod([xi - o for o in others], axis=0) / denom
        for skip in range(k):
            ders[a] += np.prod([xi - o for j, o in enumerate(others) if j != skip], axis=0) / denom
    return vals, ders


def hermite_basis(xi, h: float):
    """Cubic Hermite functions on an element of size ``h`` and their x-derivatives.

    Returns ``(N, dN/dx, d2N/dx2)``, each of shape ``(4, nq)``, for the dofs
    ``(w_left, w'_left, w_right, w'_right)``.
    """
    x = np.asarray(xi, dtype=float)
    n = np.array([1 - 3 * x**2 + 2 * x**3, h * (x - 2 * x**2 + x**3), 3 * x**2 - 2 * x**3, h * (-x**2 + x**3)])
    d1 = np.array([-6 * x + 6 * x**2, h * (1 - 4 * x + 3 * x**2), 6 * x - 6 * x**2, h * (-2 * x + 3 * x**2)]) / h
    d2 = np.array([-6 + 12 * x, h * (-4 + 6 * x), 6 - 12 * x, h * (-2 + 6 * x)]) / h**2
    return n, d1, d2


def cg_dofmap(mesh: Mesh1D, k: int) -> np.ndarray:
    """Element-to-global map for CG_k; vertices first, then element interiors."""
    e = np.arange(mesh.n_el)
    cols = [e, e + 1] + [mesh.n_nodes + (k - 1) * e + j for j in range(k - 1)]
    return np.stack(cols, axis=1)


def hermite_dofmap(mesh: Mesh1D) -> np.ndarray:
    e = np.arange(mesh.n_el)
    return np.stack([2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3], axis=1)


def dg_mass_blocks(mesh: Mesh1D, k: int, coeff: float) -> np.ndarray:
    """Diagonal Legendre mass blocks ``coeff * h / (2j + 1)``, shape ``(n_el, k+1, k+1)``."""
    diag = coeff * mesh.h / (2.0 * np.arange(k + 1) + 1.0)
    return np.broadcast_to(np.diag(diag), (mesh.n_el, k + 1, k + 1)).copy()


def _scatter(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
    """Sum element matrices ``local[e]`` into the global rows/cols ``rows[e] x cols[e]``."""
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    return sp.csr_matrix((local.ravel(), (r, c)), shape=shape)


def assemble_wave_bar(mesh: Mesh1D, rho: float, area: float, young: float, k: int = 1, n_quad: int | None = None):
    """Mixed bar matrices ``(M_rhoA, M_Ca, D_dx)`` for CG_k velocity and DG_{k-1} stress.

    ``M_Ca`` is returned as a `BlockDiagonal`; ``D_dx[i, a] = int psi_i dphi_a/dx``.
    """
    if k < 1:
        raise ConfigurationError("velocity order k must be >= 1")
    xi, w = gauss_legendre(n_quad or k + 1)
    h = mesh.h
    phi, dphi = lagrange_basis(k, xi)
    dphi = dphi / h
    leg = legendre_values(k - 1, xi)
    dofs = cg_dofmap(mesh, k)
    n_v = mesh.n_nodes + (k - 1) * mesh.n_el
    m_loc = rho * area * h * np.einsum("aq,bq,q->ab", phi, phi, w)
    mass = _scatter(np.broadcast_to(m_loc, (mesh.n_el, k + 1, k + 1)), dofs, dofs, (n_v, n_v))
    d_loc = h * np.einsum("iq,aq,q->ia", leg, dphi, w)
    srows = k * np.arange(mesh.n_el)[:, None] + np.arange(k)[None, :]
    d_dx = _scatter(np.broadcast_to(d_loc, (mesh.n_el, k, k + 1)), srows, dofs, (k * mesh.n_el, n_v))
    m_ca = BlockDiagonal([dg_mass_blocks(mesh, k - 1, 1.0 / (young * area))])
    return mass, m_ca, d_dx


@dataclass(frozen=True)
class BeamParams:
    rho: float = 2700.0
    young: float = 70e9
    length: float = 1.0
    side: float = 2e-3
    amplitude: float | None = None
    n_el: int = 50
    dt_base: float = 17e-6
    n_bending_periods: float = 5.0

    def __post_init__(self):
        vals = (self.rho, self.young, self.length, self.side, self.dt_base, self.n_bending_periods)
        if not all(v > 0 for v in vals) or self.n_el < 2:
            raise ConfigurationError(f"invalid beam parameters: {self}")

    @property
    def area(self) -> float:
        return self.side**2

    @property
    def inertia(self) -> float:
        return self.side**4 / 12.0

    @property
    def c_a(self) -> float:
        return 1.0 / (self.young * self.area)

    @property
    def c_b(self) -> float:
        return 1.0 / (self.young * self.inertia)

    @property
    def a_z(self) -> float:
        return self.side if self.amplitude is None else self.amplitude

    @property
    def bending_period(self) -> float:
        """``T_1 = (2 L^2 / pi) sqrt(rho d^2 / (E I))``."""
        return 2.0 * self.length**2 / math.pi * math.sqrt(self.rho * self.side**2 / (self.young * self.inertia))

    @property
    def t_end(self) -> float:
        return self.n_bending_periods * self.bending_period


AXIAL_ORDER = 4
BENDING_ORDER = 1


class BeamModel(PoissonModel):
    """Von Karman beam with velocity ``(v_x in CG_1, v_z in Hermite)`` and stress ``(N in DG_4, M in DG_1)``.

    Dof layout of ``q`` and ``v``: axial nodal values, then Hermite
    ``(w_0, w'_0, w_1, w'_1, ...)``.  Stress layout: five Legendre
    coefficients of ``N`` per element, then two of ``M`` per element.
    After `apply_beam_bcs` the model works on the retained dofs ``keep``.
    """

    name = "beam"

    def __init__(self, mesh: Mesh1D, params: BeamParams, n_quad: int = 5):
        self.mesh, self.params, self.n_quad = mesh, params, n_quad
        ne, h = mesh.n_el, mesh.h
        p = params
        xi, w = gauss_legendre(n_quad)
        self._wq = w * h
        phi, dphi = lagrange_basis(1, xi)
        self._dphi = dphi / h  # (2, nq)
        self._psi, self._dpsi, self._ddpsi = hermite_basis(xi, h)
        self._leg_n = legendre_values(AXIAL_ORDER, xi)
        self._leg_m = legendre_values(BENDING_ORDER, xi)
        self.n_x = mesh.n_nodes
        self.n_z = 2 * mesh.n_nodes
        self.n_full = self.n_x + self.n_z
        self._xdofs = cg_dofmap(mesh, 1)
        self._zdofs = self.n_x + hermite_dofmap(mesh)
        kn, km = AXIAL_ORDER + 1, BENDING_ORDER + 1
        self._nrows = kn * np.arange(ne)[:, None] + np.arange(kn)[None, :]
        self._mrows = kn * ne + km * np.arange(ne)[:, None] + np.arange(km)[None, :]
        n_s = (kn + km) * ne

        rhoa = p.rho * p.area
        mx = rhoa * h * np.einsum("aq,bq,q->ab", phi, phi, w)
        mz = rhoa * h * np.einsum("aq,bq,q->ab", self._psi, self._psi, w)
        m_full = (_scatter(np.broadcast_to(mx, (ne, 2, 2)), self._xdofs, self._xdofs, (self.n_full,) * 2)
                  + _scatter(np.broadcast_to(mz, (ne, 4, 4)), self._zdofs, self._zdofs, (self.n_full,) * 2))
        m_c = BlockDiagonal([dg_mass_blocks(mesh, AXIAL_ORDER, p.c_a), dg_mass_blocks(mesh, BENDING_ORDER, p.c_b)])

        wq = self._wq
        d_x = np.einsum("kq,aq,q->ka", self._leg_n, self._dphi, wq)  # (kn, 2)
        d_xx = np.einsum("lq,bq,q->lb", self._leg_m, self._ddpsi, wq)  # (km, 4)
        nl = np.einsum("kq,bq,cq,q->kbc", self._leg_n, self._dpsi, self._dpsi, wq)  # (kn, 4, 4)
        cr = [np.broadcast_to(self._nrows[:, :, None], (ne, kn, 2)), np.broadcast_to(self._mrows[:, :, None], (ne, km, 4))]
        cc = [np.broadcast_to(self._xdofs[:, None, :], (ne, kn, 2)), np.broadcast_to(self._zdofs[:, None, :], (ne, km, 4))]
        cv = [np.broadcast_to(d_x, (ne, kn, 2)), np.broadcast_to(d_xx, (ne, km, 4))]
        shape4 = (ne, kn, 4, 4)
        lr = np.broadcast_to(self._nrows[:, :, None, None], shape4)
        lc = np.broadcast_to(self._zdofs[:, None, :, None], shape4)
        lq = np.broadcast_to(self._zdofs[:, None, None, :], shape4)
        lv = np.broadcast_to(nl, shape4)
        coupling = AffineCoupling.from_entries(
            (n_s, self.n_full),
            const=tuple(np.concatenate([a.ravel() for a in arrs]) for arrs in (cr, cc, cv)),
            linear=(lr.ravel(), lc.ravel(), lq.ravel(), lv.ravel()),
            n_q=self.n_full,
        )
        self.keep = np.arange(self.n_full)
        self.mass = BlockMass(sp.csr_matrix(m_full), m_c)
        self.coupling = coupling
        self.bc = "none"

    def embed(self, q) -> np.ndarray:
        full = np.zeros(self.n_full)
        full[self.keep] = q
        return full

    def strain(self, q) -> np.ndarray:
        """Load ``G(q)``: Legendre moments of ``d_x q_x + (d_x q_z)^2 / 2`` and of ``d_xx q_z``."""
        full = self.embed(q)
        qx = full[self._xdofs]  # (ne, 2)
        qz = full[self._zdofs]  # (ne, 4)
        slope = qz @ self._dpsi
        eps = qx @ self._dphi + 0.5 * slope**2
        curv = qz @ self._ddpsi
        g_n = (eps * self._wq) @ self._leg_n.T
        g_m = (curv * self._wq) @ self._leg_m.T
        return np.concatenate([g_n.ravel(), g_m.ravel()])

    def node_dofs(self):
        """Full-layout indices of axial values, transverse values and transverse slopes."""
        nodes = np.arange(self.mesh.n_nodes)
        return nodes, self.n_x + 2 * nodes, self.n_x + 2 * nodes + 1


def assemble_beam(mesh: Mesh1D | None = None, params: BeamParams | None = None, n_quad: int = 5) -> BeamModel:
    params = params or BeamParams()
    mesh = mesh or Mesh1D(params.n_el, params.length)
    return BeamModel(mesh, params, n_quad)


BEAM_BCS = ("simply_supported", "clamped", "free")


def apply_beam_bcs(model: BeamModel, bc: str = "simply_supported") -> BeamModel:
    """Eliminate constrained dofs; returns a new model on the retained dofs.

    ``simply_supported`` removes the axial and transverse values at both
    ends (moments vanish naturally); ``clamped`` additionally removes the end
    slopes; ``free`` keeps everything.
    """
    if bc not in BEAM_BCS:
        raise ConfigurationError(f"unknown beam boundary condition {bc!r}; expected one of {BEAM_BCS}")
    ax, wz, sz = model.node_dofs()
    ends = [0, -1]
    fixed = []
    if bc in ("simply_supported", "clamped"):
        fixed += [ax[ends], wz[ends]]
    if bc == "clamped":
        fixed += [sz[ends]]
    fixed = np.concatenate(fixed) if fixed else np.zeros(0, dtype=int)
    keep = np.setdiff1d(model.keep, fixed)
    local = np.searchsorted(model.keep, keep)
    reduced = BeamModel.__new__(BeamModel)
    reduced.__dict__.update(model.__dict__)
    reduced.keep = keep
    reduced.bc = bc
    m = model.mass.m_rho
    reduced.mass = BlockMass(sp.csr_matrix(m[local][:, local]), model.mass.m_c)
    reduced.coupling = model.coupling.restrict(local, local)
    reduced._mc_inv_cache = None
    return reduced


def interpolate_hermite(model: BeamModel, f, df) -> np.ndarray:
    """Full-layout Hermite interpolant ``(f(x_i), f'(x_i))`` in the transverse block."""
    x = model.mesh.nodes
    full = np.zeros(model.n_full)
    _, wz, sz = model.node_dofs()
    full[wz] = f(x)
    full[sz] = df(x)
    return full


def beam_initial_state(params: BeamParams, model: BeamModel) -> PoissonState:
    """First bending mode ``q_z = A_z sin(pi x / L)`` at rest."""
    k = math.pi / params.length
    full = interpolate_hermite(model, lambda x: params.a_z * np.sin(k * x), lambda x: params.a_z * k * np.cos(k * x))
    q = full[model.keep]
    return PoissonState(q, np.zeros_like(q), model.stress_from_q(q))
