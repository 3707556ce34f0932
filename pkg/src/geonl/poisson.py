"""Poisson systems ``dq/dt = v``, ``H dx/dt = J(q) x`` with ``x = (v, s)``.

``H = Diag[M_rho, M_C]`` and ``J(q) = [[0, -L(q)^T], [L(q), 0]]``.  The
coupling ``L(q)`` maps velocity dofs to stress dofs; every model in this
package has ``L`` affine in ``q``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .solvers import BlockDiagonal


class ConfigurationError(ValueError):
    """Inconsistent sizes, parameters or experiment settings."""


@dataclass
class PoissonState:
    q: np.ndarray
    v: np.ndarray
    s: np.ndarray

    def copy(self) -> "PoissonState":
        return PoissonState(self.q.copy(), self.v.copy(), self.s.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.s)))


@dataclass
class BlockMass:
    """``H = Diag[m_rho, m_c]``; ``m_rho`` sparse (or small dense) SPD, ``m_c`` block-diagonal."""

    m_rho: object
    m_c: BlockDiagonal

    @property
    def n_v(self) -> int:
        return self.m_rho.shape[0]

    @property
    def n_s(self) -> int:
        return self.m_c.n

    def toarray(self) -> np.ndarray:
        m = self.m_rho.toarray() if sp.issparse(self.m_rho) else np.asarray(self.m_rho)
        h = np.zeros((self.n_v + self.n_s,) * 2)
        h[: self.n_v, : self.n_v] = m
        h[self.n_v :, self.n_v :] = self.m_c.toarray()
        return h


def energy(mass: BlockMass, state: PoissonState) -> float:
    """Quadratic energy ``1/2 v.M_rho v + 1/2 s.M_C s``."""
    v, s = np.asarray(state.v), np.asarray(state.s)
    if v.shape[0] != mass.n_v or s.shape[0] != mass.n_s:
        raise ConfigurationError(
            f"state sizes (v={v.shape[0]}, s={s.shape[0]}) do not match mass ({mass.n_v}, {mass.n_s})"
        )
    return 0.5 * float(v @ (mass.m_rho @ v)) + 0.5 * float(s @ mass.m_c.matvec(s))


class AffineCoupling:
    """Sparse ``L(q) = L_const + L_lin(q)`` on a fixed sparsity pattern.

    Nonzero ``p`` sits at ``(rows[p], cols[p])`` and has value
    ``const[p] + (lin @ q)[p]``.  Build with `from_entries`.
    """

    def __init__(self, shape, rows, cols, const, lin: sp.csr_matrix, n_q: int, dense: bool = False):
        self.shape = tuple(shape)
        self.n_q = n_q
        self.dense = dense
        order = np.lexsort((cols, rows))
        self.rows = np.asarray(rows)[order]
        self.cols = np.asarray(cols)[order]
        self.const = np.asarray(const, dtype=float)[order]
        self.lin = sp.csr_matrix(lin)[order]
        self._indptr = np.searchsorted(self.rows, np.arange(self.shape[0] + 1)).astype(np.int32)
        self._indices = self.cols.astype(np.int32)
        # selection matrix scattering pattern entries into velocity columns
        nnz = self.rows.size
        self._col_select = sp.csr_matrix((np.ones(nnz), (self.cols, np.arange(nnz))), shape=(self.shape[1], nnz))
        # fixed pattern of the geometric stiffness: entry (cols[p], j) += s[rows[p]] * lin[p, j]
        coo = self.lin.tocoo()
        self._kg_srow = self.rows[coo.row]
        self._kg_val = coo.data
        keys = self.cols[coo.row].astype(np.int64) * n_q + coo.col
        uniq, self._kg_slot = np.unique(keys, return_inverse=True)
        self._kg_pattern = sp.csr_matrix(
            (np.zeros(uniq.size), (uniq // n_q, uniq % n_q)), shape=(self.shape[1], n_q)
        )
        self._kg_pattern.sort_indices()
        # csr ordering of the unique keys is row-major, i.e. ascending key order

    @classmethod
    def from_entries(cls, shape, const, linear, n_q: int, dense: bool = False) -> "AffineCoupling":
        """``const = (rows, cols, vals)``, ``linear = (rows, cols, q_index, vals)``; duplicates are summed."""
        cr, cc, cv = (np.asarray(a) for a in const)
        lr, lc, lq, lv = (np.asarray(a) for a in linear)
        keys = np.concatenate([cr * shape[1] + cc, lr * shape[1] + lc]).astype(np.int64)
        uniq, inv = np.unique(keys, return_inverse=True)
        n_c = cr.size
        d0 = np.bincount(inv[:n_c], weights=cv, minlength=uniq.size)
        lin = sp.csr_matrix((lv, (inv[n_c:], lq)), shape=(uniq.size, n_q))
        lin.sum_duplicates()
        return cls(shape, uniq // shape[1], uniq % shape[1], d0, lin, n_q, dense)

    def values(self, q) -> np.ndarray:
        return self.const + self.lin @ q

    def assemble(self, q):
        data = self.values(q)
        mat = sp.csr_matrix((data, self._indices, self._indptr), shape=self.shape)
        return mat.toarray() if self.dense else mat

    def constant_part(self):
        return self.assemble(np.zeros(self.n_q))

    def geometric_stiffness(self, s):
        """Jacobian of ``q -> L(q)^T s`` at fixed ``s`` (constant, since ``L`` is affine)."""
        data = np.bincount(self._kg_slot, weights=np.asarray(s)[self._kg_srow] * self._kg_val,
                           minlength=self._kg_pattern.nnz)
        k = sp.csr_matrix((data, self._kg_pattern.indices, self._kg_pattern.indptr), shape=self._kg_pattern.shape)
        return k.toarray() if self.dense else k

    def restrict(self, col_keep: np.ndarray, q_keep: np.ndarray) -> "AffineCoupling":
        """Drop constrained velocity columns and displacement dofs (both fixed to zero)."""
        col_map = -np.ones(self.shape[1], dtype=np.int64)
        col_map[col_keep] = np.arange(len(col_keep))
        mask = col_map[self.cols] >= 0
        lin = self.lin[np.flatnonzero(mask)][:, q_keep]
        return AffineCoupling(
            (self.shape[0], len(col_keep)), self.rows[mask], col_map[self.cols[mask]],
            self.const[mask], lin, len(q_keep), self.dense,
        )

    def dense_affine(self):
        """Return ``(L0, L1)`` with ``L(q) = L0 + sum_j q_j L1[j]`` as dense arrays."""
        L0 = np.zeros(self.shape)
        np.add.at(L0, (self.rows, self.cols), self.const)
        L1 = np.zeros((self.n_q,) + self.shape)
        lin = self.lin.tocoo()
        np.add.at(L1, (lin.col, self.rows[lin.row], self.cols[lin.row]), lin.data)
        return L0, L1


class PoissonModel:
    """Common interface of the discretized models.

    Subclasses set ``mass`` (`BlockMass`) and ``coupling`` (anything with
    ``assemble(q)`` and ``geometric_stiffness(s)``) and implement
    `strain`, the stress-space load ``G(q)`` with ``M_C stress = G(q)``
    and ``dG/dq = L(q)``.
    """

    mass: BlockMass
    coupling: object
    name = "model"

    @property
    def n_q(self) -> int:
        return self.mass.n_v

    @property
    def n_s(self) -> int:
        return self.mass.n_s

    @property
    def dense(self) -> bool:
        return not sp.issparse(self.mass.m_rho)

    def L(self, q):
        return self.coupling.assemble(q)

    def strain(self, q) -> np.ndarray:
        raise NotImplementedError

    def stress_from_q(self, q) -> np.ndarray:
        return self.mass.m_c.solve(self.strain(q))

    def rhs_force(self, q) -> np.ndarray:
        return -(self.L(q).T @ self.stress_from_q(q))

    def potential(self, q) -> float:
        g = self.strain(q)
        return 0.5 * float(g @ self.mass.m_c.solve(g))

    def energy(self, state: PoissonState) -> float:
        return energy(self.mass, state)

    def tangent_stiffness(self, q_left, q_right, L_left=None, L_right=None):
        """``L(q_left)^T M_C^{-1} L(q_right)``."""
        L_left = self.L(q_left) if L_left is None else L_left
        L_right = self.L(q_right) if L_right is None else L_right
        if self.dense:
            return L_left.T @ self.mass.m_c.solve(L_right)
        return (L_left.T @ (self._mc_inv_sparse() @ L_right)).tocsr()

    def condensed_stiffness(self, q, L=None):
        """``K(q) = L(q)^T M_C^{-1} L(q)``."""
        L = self.L(q) if L is None else L
        return self.tangent_stiffness(q, q, L, L)

    def implicit_matrix(self, q, c: float, L=None):
        """``M_rho + c K(q)``, the condensed linearly implicit operator."""
        return self.mass.m_rho + c * self.condensed_stiffness(q, L)

    def geometric_stiffness(self, q, s):
        return self.coupling.geometric_stiffness(s)

    def _mc_inv_sparse(self):
        if getattr(self, "_mc_inv_cache", None) is None:
            self._mc_inv_cache = self.mass.m_c.inverse_sparse()
        return self._mc_inv_cache

    def zero_state(self) -> PoissonState:
        return PoissonState(np.zeros(self.n_q), np.zeros(self.n_q), np.zeros(self.n_s))


def apply_j(coupling, q, v, s):
    """Return ``(-L(q)^T s, L(q) v)``, the two blocks of ``J(q) x``."""
    L = coupling.assemble(q)
    v, s = np.asarray(v), np.asarray(s)
    if L.shape != (s.shape[0], v.shape[0]):
        raise ConfigurationError(f"coupling of shape {L.shape} does not accept v={v.shape[0]}, s={s.shape[0]}")
    return -(L.T @ s), L @ v


def j_matrix(coupling, q) -> np.ndarray:
    """Dense ``J(q)``.  Test and analysis use only."""
    L = coupling.assemble(q)
    L = L.toarray() if sp.issparse(L) else np.asarray(L)
    ns, nv = L.shape
    j = np.zeros((nv + ns, nv + ns))
    j[:nv, nv:] = -L.T
    j[nv:, :nv] = L
    return j


def cayley_spectrum(mass, j, dt: float) -> np.ndarray:
    """Eigenvalues of ``(H - dt/2 J)^{-1} (H + dt/2 J)``, the linearly implicit step map.

    ``mass`` is a `BlockMass` or a dense SPD matrix.  Dense path; intended
    for dimensions up to a few hundred.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    h = mass.toarray() if isinstance(mass, BlockMass) else np.asarray(mass, dtype=float)
    j = np.asarray(j, dtype=float)
    a = h - 0.5 * dt * j
    b = h + 0.5 * dt * j
    return np.linalg.eigvals(np.linalg.solve(a, b))
