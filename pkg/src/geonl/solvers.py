"""Sparse symmetric linear algebra used by the implicit steps.

Direct SPD solves go through a bandwidth-reducing (reverse Cuthill-McKee)
ordering followed by LAPACK banded Cholesky (``dpbtrf``).  Small or dense
operands use the dense ``dpotrf`` path.  Both report the failing pivot when
the matrix is not positive definite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee

DENSE_CUTOFF = 64


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot is not strictly positive."""

    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = int(pivot)
        super().__init__(message or f"matrix is not positive definite (pivot {pivot})")


class IterationBudgetExceeded(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"CG did not converge in {iterations} iterations (relative residual {residual:.3e})")


class IndefiniteOperator(RuntimeError):
    def __init__(self, iteration: int, curvature: float):
        self.iteration = iteration
        self.curvature = curvature
        super().__init__(f"non-positive curvature p^T A p = {curvature:.3e} at CG iteration {iteration}")


def is_symmetric(a, rtol: float = 1e-14) -> bool:
    if sp.issparse(a):
        diff = abs(a - a.T)
        scale = abs(a).max()
        return diff.nnz == 0 or diff.max() <= rtol * scale
    a = np.asarray(a)
    return np.max(np.abs(a - a.T), initial=0.0) <= rtol * np.max(np.abs(a), initial=0.0)


class BandedPattern:
    """Symbolic data for banded Cholesky of matrices sharing one CSR structure."""

    def __init__(self, a: sp.csr_matrix):
        a = sp.csr_matrix(a)
        a.sort_indices()
        n = a.shape[0]
        self.n = n
        self.indptr = a.indptr.copy()
        self.indices = a.indices.copy()
        self.perm = np.asarray(reverse_cuthill_mckee(a, symmetric_mode=True), dtype=np.int64)
        self.iperm = np.empty_like(self.perm)
        self.iperm[self.perm] = np.arange(n)
        rows = np.repeat(np.arange(n), np.diff(a.indptr))
        pr, pc = self.iperm[rows], self.iperm[a.indices]
        self.lower_mask = pr >= pc
        offset = (pr - pc)[self.lower_mask]
        self.bandwidth = int(offset.max(initial=0))
        self.flat = offset * n + pc[self.lower_mask]

    def matches(self, a: sp.csr_matrix) -> bool:
        return (
            a.shape[0] == self.n
            and a.nnz == self.indices.size
            and np.array_equal(a.indptr, self.indptr)
            and np.array_equal(a.indices, self.indices)
        )


class SpdFactorization:
    """Cholesky factor of an SPD matrix; immutable once built."""

    def __init__(self, n: int, kind: str, factor, pattern: BandedPattern | None = None):
        self.n = n
        self.kind = kind
        self._factor = factor
        self.pattern = pattern

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.kind == "dense":
            x, info = lapack.dpotrs(self._factor, b, lower=1)
        else:
            perm = self.pattern.perm
            x, info = lapack.dpbtrs(self._factor, b[perm], lower=1)
            out = np.empty_like(x)
            out[perm] = x
            x = out
        if info != 0:
            raise np.linalg.LinAlgError(f"triangular solve failed (info={info})")
        return x


def factor_spd(a, pattern: BandedPattern | None = None) -> SpdFactorization:
    """Cholesky-factor a symmetric matrix, raising `NotPositiveDefinite` on failure.

    Only the lower triangle is read.  ``pattern`` lets repeated factorizations
    of matrices with identical sparsity skip the reordering; it is rebuilt
    silently if the structure differs.
    """
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not sp.issparse(a) or n <= DENSE_CUTOFF:
        dense = a.toarray() if sp.issparse(a) else np.array(a, dtype=float)
        c, info = lapack.dpotrf(dense, lower=1, clean=1)
        if info > 0:
            raise NotPositiveDefinite(info - 1)
        if info < 0:
            raise ValueError(f"dpotrf: illegal argument {-info}")
        return SpdFactorization(n, "dense", c)

    a = sp.csr_matrix(a)
    if not a.has_sorted_indices:
        a.sort_indices()
    if pattern is None or not pattern.matches(a):
        pattern = BandedPattern(a)
    ab = np.zeros((pattern.bandwidth + 1) * n)
    ab[pattern.flat] = a.data[pattern.lower_mask]
    c, info = lapack.dpbtrf(ab.reshape(pattern.bandwidth + 1, n), lower=1)
    if info > 0:
        raise NotPositiveDefinite(int(pattern.perm[info - 1]))
    if info < 0:
        raise ValueError(f"dpbtrf: illegal argument {-info}")
    return SpdFactorization(n, "banded", c, pattern)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


def _as_operator(a):
    if callable(a) and not hasattr(a, "shape"):
        return a
    return lambda x: a @ x


def solve_cg(a, rhs, precond=None, tol: float = 1e-12, max_iter: int | None = None, x0=None) -> CGResult:
    """Preconditioned conjugate gradient for an SPD operator.

    ``a`` and ``precond`` may be matrices or callables.  Stops when
    ``||b - A x|| <= tol ||b||``.
    """
    apply_a = _as_operator(a)
    apply_p = (lambda r: r) if precond is None else _as_operator(precond)
    b = np.asarray(rhs, dtype=float)
    n = b.size
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0)
    r = b - apply_a(x) if x0 is not None else b.copy()
    rel = np.linalg.norm(r) / bnorm
    if rel <= tol:
        return CGResult(x, 0, rel)
    z = apply_p(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        curv = p @ ap
        if not curv > 0.0:
            raise IndefiniteOperator(it, float(curv))
        alpha = rz / curv
        x += alpha * p
        r -= alpha * ap
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            return CGResult(x, it, rel)
        z = apply_p(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise IterationBudgetExceeded(max_iter, rel)


def block_jacobi(a: sp.spmatrix, block: int = 1):
    """Return a callable applying the inverse of the diagonal ``block``-blocks of ``a``."""
    n = a.shape[0]
    if n % block:
        raise ValueError("matrix size is not a multiple of the block size")
    a = sp.csr_matrix(a)
    nb = n // block
    idx = np.arange(n).reshape(nb, block)
    blocks = np.empty((nb, block, block))
    for i in range(block):
        for j in range(block):
            blocks[:, i, j] = np.asarray(a[idx[:, i], idx[:, j]]).ravel()
    inv = np.linalg.inv(blocks)
    return lambda r: np.einsum("kij,kj->ki", inv, r.reshape(nb, block)).ravel()


class BlockDiagonal:
    """Block-diagonal SPD matrix stored as groups of equal-size dense blocks.

    ``groups`` is a sequence of arrays of shape ``(n_blocks, b, b)``; the
    global matrix places them along the diagonal in the given order.  Each
    block is Cholesky-checked and inverted once at construction.
    """

    def __init__(self, groups):
        self.groups = [np.ascontiguousarray(g, dtype=float) for g in groups]
        self.inverses = []
        self.offsets = [0]
        for g in self.groups:
            if g.ndim != 3 or g.shape[1] != g.shape[2]:
                raise ValueError(f"block group must have shape (n, b, b), got {g.shape}")
            if np.max(np.abs(g - g.transpose(0, 2, 1)), initial=0.0) > 1e-13 * np.max(np.abs(g), initial=1.0):
                raise ValueError("blocks are not symmetric")
            try:
                np.linalg.cholesky(g)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite(-1, "a diagonal block is not positive definite") from exc
            self.inverses.append(np.linalg.inv(g))
            self.offsets.append(self.offsets[-1] + g.shape[0] * g.shape[1])
        self.n = self.offsets[-1]
        self.shape = (self.n, self.n)

    @property
    def block_sizes(self) -> list[int]:
        return [g.shape[1] for g in self.groups]

    def _apply(self, mats, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"vector of length {x.shape[0]} does not match block matrix of size {self.n}")
        out = np.empty_like(x)
        for m, lo, hi in zip(mats, self.offsets[:-1], self.offsets[1:]):
            nb, b, _ = m.shape
            seg = x[lo:hi].reshape(nb, b, *x.shape[1:])
            if b == 1:
                res = m[:, 0, 0].reshape(nb, 1, *([1] * (x.ndim - 1))) * seg
            else:
                res = np.einsum("kij,kj...->ki...", m, seg)
            out[lo:hi] = res.reshape(hi - lo, *x.shape[1:])
        return out

    def matvec(self, x):
        return self._apply(self.groups, x)

    def solve(self, rhs):
        """Apply the inverse blockwise; cost is linear in the number of blocks."""
        return self._apply(self.inverses, rhs)

    def __matmul__(self, x):
        return self.matvec(x)

    def _sparse(self, mats) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for m, lo in zip(mats, self.offsets[:-1]):
            nb, b, _ = m.shape
            base = lo + b * np.arange(nb)[:, None, None]
            i = np.arange(b)[None, :, None]
            j = np.arange(b)[None, None, :]
            rows.append(np.broadcast_to(base + i, m.shape).ravel())
            cols.append(np.broadcast_to(base + j, m.shape).ravel())
            vals.append(m.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=self.shape
        )

    def to_sparse(self) -> sp.csr_matrix:
        return self._sparse(self.groups)

    def inverse_sparse(self) -> sp.csr_matrix:
        return self._sparse(self.inverses)

    def toarray(self) -> np.ndarray:
        return self.to_sparse().toarray()


def block_diag_solve(m_c: BlockDiagonal, rhs) -> np.ndarray:
    return m_c.solve(rhs)
