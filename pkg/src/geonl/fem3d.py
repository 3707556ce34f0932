"""Tetrahedral box meshes and Saint-Venant-Kirchhoff elastodynamics in Poisson form.

Displacement and velocity are continuous P1 vector fields (dofs interleaved
per vertex, ``3 * vertex + component``).  The stress is one symmetric
tensor per cell stored in Mandel components
``(S11, S22, S33, sqrt2 S23, sqrt2 S13, sqrt2 S12)``, so the Euclidean
product of two coefficient vectors is the double contraction of the
tensors.  All cell integrands are constant, so every cell integral is
``volume * value``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .poisson import BlockMass, ConfigurationError, PoissonModel, PoissonState
from .solvers import BlockDiagonal

SQRT2 = math.sqrt(2.0)
VTK_TETRA = 10


class MeshError(ValueError):
    pass


def mandel_basis() -> np.ndarray:
    """Orthonormal basis ``Psi[m]`` of symmetric 3x3 tensors, shape ``(6, 3, 3)``."""
    psi = np.zeros((6, 3, 3))
    for m in range(3):
        psi[m, m, m] = 1.0
    for m, (i, j) in zip(range(3, 6), [(1, 2), (0, 2), (0, 1)]):
        psi[m, i, j] = psi[m, j, i] = 1.0 / SQRT2
    return psi


PSI = mandel_basis()


def to_mandel(t: np.ndarray) -> np.ndarray:
    """Symmetric tensors ``(..., 3, 3)`` to Mandel vectors ``(..., 6)``."""
    return np.einsum("mij,...ij->...m", PSI, t)


def from_mandel(m: np.ndarray) -> np.ndarray:
    return np.einsum("mij,...m->...ij", PSI, m)


@dataclass
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    base: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.tets.shape[0]

    def volumes(self) -> np.ndarray:
        x = self.vertices[self.tets]
        return np.linalg.det(x[:, 1:] - x[:, :1]) / 6.0

    def gradients(self):
        """Constant P1 gradients ``(n_cells, 4, 3)`` and volumes; raises `MeshError` on degenerate cells."""
        x = self.vertices[self.tets]
        edges = x[:, 1:] - x[:, :1]
        vol = np.linalg.det(edges) / 6.0
        if np.any(vol <= 1e-14 * np.max(np.abs(vol), initial=1.0)):
            raise MeshError(f"{int(np.sum(vol <= 0))} degenerate or inverted tetrahedra")
        inv = np.linalg.inv(edges)  # rows of inv^T are the gradients of barycentrics 1..3
        g = np.empty((self.n_cells, 4, 3))
        g[:, 1:] = np.transpose(inv, (0, 2, 1))
        g[:, 0] = -g[:, 1:].sum(axis=1)
        return g, vol

    def boundary_faces(self) -> np.ndarray:
        faces = np.sort(self.tets[:, list(itertools.combinations(range(4), 3))].reshape(-1, 3), axis=1)
        uniq, count = np.unique(faces, axis=0, return_counts=True)
        return uniq[count == 1]


def build_box_mesh(nx: int, ny: int, nz: int, lx: float = 1.0, ly: float = 1.0, lz: float = 1.0) -> TetMesh:
    """Structured Kuhn mesh: every cube split into 6 positively oriented tets along its main diagonal."""
    if min(nx, ny, nz) < 1 or min(lx, ly, lz) <= 0:
        raise ConfigurationError("box mesh needs positive cell counts and lengths")
    gx, gy, gz = (np.linspace(0.0, l, n + 1) for l, n in ((lx, nx), (ly, ny), (lz, nz)))
    zz, yy, xx = np.meshgrid(gz, gy, gx, indexing="ij")
    vertices = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    def vid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    unit = np.eye(3, dtype=int)
    tets = []
    for perm in itertools.permutations(range(3)):
        corner = np.zeros(3, dtype=int)
        path = [corner.copy()]
        for axis in perm:
            corner = corner + unit[axis]
            path.append(corner.copy())
        cell = np.stack([vid(i + p[0], j + p[1], k + p[2]) for p in path], axis=1)
        sign = np.linalg.det(unit[list(perm)])
        if sign < 0:
            cell = cell[:, [0, 2, 1, 3]]
        tets.append(cell)
    # cube-major ordering: the six tets of a cube are contiguous
    tets = np.stack(tets, axis=1).reshape(-1, 4)
    base = np.flatnonzero(vertices[:, 2] == 0.0)
    return TetMesh(vertices, tets, base)


@dataclass(frozen=True)
class ColumnParams:
    rho: float = 1100.0
    young: float = 17e6
    nu: float = 0.3
    lx: float = 1.0
    ly: float = 1.0
    lz: float = 6.0
    nx: int = 6
    ny: int = 6
    nz: int = 36
    dt_base: float = 1.16e-3
    t_end: float = 0.5
    v_slope: float = 5.0 / 3.0

    def __post_init__(self):
        if not (self.rho > 0 and self.young > 0 and -1.0 < self.nu < 0.5):
            raise ConfigurationError(f"non-physical column material: {self}")

    @property
    def mu(self) -> float:
        return self.young / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        return self.young * self.nu / ((1.0 - 2.0 * self.nu) * (1.0 + self.nu))

    @property
    def kappa(self) -> float:
        return self.lam + 2.0 * self.mu / 3.0

    @property
    def c_l(self) -> float:
        return math.sqrt((self.kappa + 4.0 * self.mu / 3.0) / self.rho)

    @property
    def h(self) -> float:
        return self.lx / self.nx

    @property
    def dt_cfl(self) -> float:
        """``h / c_l``; the tabulated ``dt_base`` is this value rounded to 1.16 ms."""
        return self.h / self.c_l

    def mesh(self) -> TetMesh:
        return build_box_mesh(self.nx, self.ny, self.nz, self.lx, self.ly, self.lz)


def saint_venant_compliance(mu: float, lam: float):
    """Mandel ``(C, K)`` with ``K(E) = lam tr(E) I + 2 mu E`` and ``C = K^{-1}``."""
    if not (mu > 0 and 3.0 * lam + 2.0 * mu > 0):
        raise ConfigurationError(f"non-physical Lame moduli mu={mu}, lambda={lam}")
    m = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    stiff = lam * np.outer(m, m) + 2.0 * mu * np.eye(6)
    comp = np.eye(6) / (2.0 * mu) - lam / (2.0 * mu * (3.0 * lam + 2.0 * mu)) * np.outer(m, m)
    return comp, stiff


class _PatternScatter:
    """Sums per-cell 12x12 blocks into a fixed CSR pattern over the retained dofs."""

    def __init__(self, cell_dofs: np.ndarray, dof_map: np.ndarray, n: int):
        rows = dof_map[cell_dofs][:, :, None]
        cols = dof_map[cell_dofs][:, None, :]
        rows, cols = np.broadcast_arrays(rows, cols)
        self.sel = np.flatnonzero(((rows >= 0) & (cols >= 0)).ravel())
        keys = rows.ravel()[self.sel].astype(np.int64) * n + cols.ravel()[self.sel]
        uniq, self.slot = np.unique(keys, return_inverse=True)
        self.n = n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(uniq // n, np.arange(n + 1)).astype(np.int32)
        self.nnz = uniq.size

    def __call__(self, blocks: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.slot, weights=blocks.ravel()[self.sel], minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


class ElasticityCoupling:
    """``L(q)``: cell stress dofs from velocity dofs, ``vol * Psi_m : F(q)^T grad v``."""

    def __init__(self, model: "ElasticityModel"):
        self.model = model
        nc = model.mesh.n_cells
        n = model.n_q
        rows = np.broadcast_to((6 * np.arange(nc))[:, None, None] + np.arange(6)[None, :, None], (nc, 6, 12))
        cols = np.broadcast_to(model.dof_map[model.cell_dofs][:, None, :], (nc, 6, 12))
        keep = np.flatnonzero(cols.ravel() >= 0)
        r, c = rows.ravel()[keep], cols.ravel()[keep]
        order = np.lexsort((c, r))
        self.sel = keep[order]
        self.indices = c[order].astype(np.int32)
        self.indptr = np.searchsorted(r[order], np.arange(6 * nc + 1)).astype(np.int32)
        self.shape = (6 * nc, n)
        self.n_q = n
        self.dense = False

    def assemble(self, q) -> sp.csr_matrix:
        blocks = self.model.cell_coupling(q)
        return sp.csr_matrix((blocks.ravel()[self.sel], self.indices, self.indptr), shape=self.shape)

    def constant_part(self) -> sp.csr_matrix:
        return self.assemble(np.zeros(self.n_q))

    def geometric_stiffness(self, s) -> sp.csr_matrix:
        return self.model.geometric_stiffness(None, s)


class ElasticityModel(PoissonModel):
    """Saint-Venant-Kirchhoff solid on a `TetMesh` with optional clamped base."""

    name = "elasticity"

    def __init__(self, mesh: TetMesh, params: ColumnParams, clamped: bool = True):
        self.mesh, self.params, self.clamped = mesh, params, clamped
        self.grads, self.vol = mesh.gradients()
        nv = mesh.n_vertices
        nc = mesh.n_cells
        self.cell_dofs = (3 * mesh.tets[:, :, None] + np.arange(3)[None, None, :]).reshape(nc, 12)
        fixed = np.zeros(3 * nv, dtype=bool)
        if clamped:
            fixed[(3 * mesh.base[:, None] + np.arange(3)).ravel()] = True
        self.keep = np.flatnonzero(~fixed)
        self.dof_map = -np.ones(3 * nv, dtype=np.int64)
        self.dof_map[self.keep] = np.arange(self.keep.size)
        self.n_full = 3 * nv
        self._scatter = _PatternScatter(self.cell_dofs, self.dof_map, self.keep.size)

        comp, stiff = saint_venant_compliance(params.mu, params.lam)
        self.compliance, self.stiffness = comp, stiff
        self.scalar_mass = self._scalar_mass()
        m_cell = params.rho * self.vol[:, None, None] / 20.0 * (np.ones((4, 4)) + np.eye(4))
        m_blocks = np.einsum("nab,kc->nakbc", m_cell, np.eye(3)).reshape(nc, 12, 12)
        self._m_data = self._scatter(m_blocks)
        self.mass = BlockMass(self._m_data, BlockDiagonal([self.vol[:, None, None] * comp]))
        self.coupling = ElasticityCoupling(self)
        self._gpsi = np.einsum("nbj,mij->nmbi", self.grads, PSI).reshape(nc, 24, 3)  # Psi_m g_b

    def _scalar_mass(self) -> sp.csr_matrix:
        nc = self.mesh.n_cells
        m_cell = self.params.rho * self.vol[:, None, None] / 20.0 * (np.ones((4, 4)) + np.eye(4))
        r = np.broadcast_to(self.mesh.tets[:, :, None], (nc, 4, 4)).ravel()
        c = np.broadcast_to(self.mesh.tets[:, None, :], (nc, 4, 4)).ravel()
        return sp.csr_matrix((m_cell.ravel(), (r, c)), shape=(self.mesh.n_vertices,) * 2)

    @property
    def n_q(self) -> int:
        return self.keep.size

    def embed(self, q) -> np.ndarray:
        full = np.zeros(self.n_full)
        full[self.keep] = q
        return full

    def deformation_gradient(self, q) -> np.ndarray:
        qc = self.embed(q)[self.cell_dofs].reshape(-1, 4, 3)
        return np.eye(3) + np.transpose(qc, (0, 2, 1)) @ self.grads

    def cell_b(self, q) -> np.ndarray:
        """``B[n, m, (b, k)] = (F Psi_m g_b)_k``, the per-volume coupling, shape ``(nc, 6, 12)``."""
        f = self.deformation_gradient(q)
        return (self._gpsi @ np.transpose(f, (0, 2, 1))).reshape(-1, 6, 12)

    def cell_coupling(self, q) -> np.ndarray:
        return self.vol[:, None, None] * self.cell_b(q)

    def green_lagrange(self, q) -> np.ndarray:
        f = self.deformation_gradient(q)
        return 0.5 * (np.transpose(f, (0, 2, 1)) @ f - np.eye(3))

    def strain(self, q) -> np.ndarray:
        return (self.vol[:, None] * to_mandel(self.green_lagrange(q))).ravel()

    def cell_stress(self, s) -> np.ndarray:
        """Second Piola-Kirchhoff tensors ``(nc, 3, 3)`` from stress dofs."""
        return from_mandel(np.asarray(s).reshape(-1, 6))

    def tangent_stiffness(self, q_left, q_right, L_left=None, L_right=None):
        bl = self.cell_b(q_left)
        br = bl if q_right is q_left else self.cell_b(q_right)
        blocks = (self.vol[:, None, None] * np.transpose(bl, (0, 2, 1))) @ (self.stiffness @ br)
        return self._scatter(blocks)

    def condensed_stiffness(self, q, L=None):
        return self.tangent_stiffness(q, q)

    def implicit_matrix(self, q, c: float, L=None):
        k = self.condensed_stiffness(q)
        return sp.csr_matrix((self._m_data.data + c * k.data, k.indices, k.indptr), shape=k.shape)

    def geometric_stiffness(self, q, s):
        stress = self.cell_stress(s)
        g = self.vol[:, None, None] * (self.grads @ stress @ np.transpose(self.grads, (0, 2, 1)))
        blocks = np.zeros((g.shape[0], 4, 3, 4, 3))
        for k in range(3):
            blocks[:, :, k, :, k] = g
        blocks = blocks.reshape(-1, 12, 12)
        return self._scatter(blocks)


def assemble_elasticity(mesh: TetMesh | None = None, params: ColumnParams | None = None,
                        clamped: bool = True) -> ElasticityModel:
    params = params or ColumnParams()
    return ElasticityModel(mesh or params.mesh(), params, clamped)


def column_initial_state(params: ColumnParams, model: ElasticityModel, clamped: bool = True) -> PoissonState:
    """Undeformed, unstressed column with ``v = (v_slope z, 0, 0)``."""
    if clamped != model.clamped:
        raise ConfigurationError(f"model was assembled with clamped={model.clamped}, state requested clamped={clamped}")
    v_full = np.zeros((model.mesh.n_vertices, 3))
    v_full[:, 0] = params.v_slope * model.mesh.vertices[:, 2]
    v = v_full.ravel()[model.keep]
    return PoissonState(np.zeros(model.n_q), v, np.zeros(model.n_s))


def angular_momentum(mesh: TetMesh, model: ElasticityModel, q, v) -> np.ndarray:
    """``sum_ab M_ab (X_a + q_a) x v_b`` with the consistent scalar mass (exact for P1 fields)."""
    r = mesh.vertices + model.embed(q).reshape(-1, 3)
    mv = model.scalar_mass @ model.embed(v).reshape(-1, 3)
    return np.cross(r, mv).sum(axis=0)


def linear_momentum(model: ElasticityModel, v) -> np.ndarray:
    return (model.scalar_mass @ model.embed(v).reshape(-1, 3)).sum(axis=0)


def export_vtk(mesh: TetMesh, path, displacement=None, stress_norm=None, title: str = "geonl") -> None:
    """Legacy ASCII VTK unstructured grid with optional point displacement and cell ``||S||_F``."""
    fmt = "%.17g"
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        np.savetxt(fh, mesh.vertices, fmt=fmt)
        nc = mesh.n_cells
        fh.write(f"CELLS {nc} {5 * nc}\n")
        np.savetxt(fh, np.hstack([np.full((nc, 1), 4), mesh.tets]), fmt="%d")
        fh.write(f"CELL_TYPES {nc}\n")
        np.savetxt(fh, np.full(nc, VTK_TETRA), fmt="%d")
        if displacement is not None:
            d = np.asarray(displacement, dtype=float).reshape(mesh.n_vertices, 3)
            fh.write(f"POINT_DATA {mesh.n_vertices}\nVECTORS displacement double\n")
            np.savetxt(fh, d, fmt=fmt)
        if stress_norm is not None:
            s = np.asarray(stress_norm, dtype=float).reshape(nc)
            fh.write(f"CELL_DATA {nc}\nSCALARS stress_frobenius double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, s, fmt=fmt)


def read_vtk(path) -> dict:
    """Minimal reader for files written by `export_vtk`."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    out = {"header": tokens[0]}
    it = iter(tokens[4:])
    for line in it:
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            out["points"] = np.array([next(it).split() for _ in range(n)], dtype=float)
        elif key == "CELLS":
            n = int(parts[1])
            out["cells"] = np.array([next(it).split() for _ in range(n)], dtype=int)
        elif key == "CELL_TYPES":
            out["cell_types"] = np.array([next(it) for _ in range(int(parts[1]))], dtype=int)
        elif key == "VECTORS":
            out[parts[1]] = np.array([next(it).split() for _ in range(out["points"].shape[0])], dtype=float)
        elif key == "SCALARS":
            next(it)
            out[parts[1]] = np.array([next(it) for _ in range(out["cells"].shape[0])], dtype=float)
    return out


def stress_frobenius(model: ElasticityModel, s) -> np.ndarray:
    """Per-cell ``||S||_F``; equals the Euclidean norm of the Mandel vector."""
    return np.linalg.norm(np.asarray(s).reshape(-1, 6), axis=1)
