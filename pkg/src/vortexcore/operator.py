"""Discrete weighted Laplacian -div(grad(u)/b) and linear solves.

The operator is the 5-point divergence-form stencil on the interior index
set with homogeneous Dirichlet data on the rectangle edges, the obstacle
and (through the rectangle edge at x1 = 0) the symmetry axis.  Each face
between nodes carries the conductance (1/b at the face midpoint) *
(h_perp/h_par); the matrix is assembled face by face, so it is symmetric
bit-exactly and an M-matrix, and its quadratic form coincides with
``grid.dirichlet_energy``.

Solves use plain conjugate gradients with a Jacobi preconditioner; the
reported residual is recomputed from scratch after the iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Grid, face_data
from .model import WeightProfile


class LinearSolveFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class SparseOperator:
    """Symmetric positive definite CSR matrix with its Jacobi diagonal."""

    matrix: sp.csr_matrix
    diagonal: np.ndarray
    symmetric: bool

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def quadratic_form(self, x: np.ndarray) -> float:
        return float(x @ (self.matrix @ x))


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    relative_residual: float
    converged: bool


def assemble(grid: Grid, b: WeightProfile) -> SparseOperator:
    """5-point stencil for -div(grad(u)/b) on the interior index set."""
    c1, _, c2, _ = face_data(grid, b)
    idx = grid.index
    n = grid.n_interior
    diag = np.zeros(n)
    rows, cols, vals = [], [], []
    for cf, ka, kb in ((c1, idx[:-1, :], idx[1:, :]),
                       (c2, idx[:, :-1], idx[:, 1:])):
        act = cf > 0
        a_in = (ka >= 0) & act
        b_in = (kb >= 0) & act
        both = a_in & b_in
        np.add.at(diag, ka[a_in], cf[a_in])
        np.add.at(diag, kb[b_in], cf[b_in])
        rows += [ka[both], kb[both]]
        cols += [kb[both], ka[both]]
        vals += [-cf[both], -cf[both]]
    rows = np.concatenate(rows + [np.arange(n)])
    cols = np.concatenate(cols + [np.arange(n)])
    vals = np.concatenate(vals + [diag])
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    symmetric = (mat != mat.T).nnz == 0
    return SparseOperator(matrix=mat, diagonal=mat.diagonal(), symmetric=symmetric)


def cg_solve(A: SparseOperator, rhs: np.ndarray, tol: float = 1e-10,
             maxit: int | None = None, x0: np.ndarray | None = None
             ) -> tuple[np.ndarray, LinearSolveReport]:
    """Jacobi-preconditioned conjugate gradients; deterministic for fixed
    inputs.  Stops when ||rhs - A x|| <= tol * ||rhs||."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    if maxit is None:
        maxit = max(20 * n, 1000)
    nrhs = float(np.linalg.norm(rhs))
    if nrhs == 0.0:
        return np.zeros(n), LinearSolveReport(0, 0.0, True)

    minv = 1.0 / A.diagonal
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - A.matvec(x) if x0 is not None else rhs.copy()
    z = minv * r
    d = z.copy()
    rz = float(r @ z)
    it = 0
    while it < maxit:
        if np.linalg.norm(r) <= tol * nrhs:
            break
        Ad = A.matvec(d)
        alpha = rz / float(d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        z = minv * r
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
        it += 1
    rel = float(np.linalg.norm(rhs - A.matvec(x)) / nrhs)
    return x, LinearSolveReport(it, rel, rel <= tol)


def solve_weighted_harmonic(grid: Grid, b: WeightProfile,
                            boundary_data: np.ndarray,
                            tol: float = 1e-12) -> np.ndarray:
    """Discrete solution of -div(grad(q)/b) = 0 with the given Dirichlet
    data on every non-interior node (rectangle edges, obstacle, axis).

    Satisfies the discrete maximum principle: the result stays within the
    range of the boundary data."""
    g = np.asarray(boundary_data, dtype=float)
    if g.shape != grid.shape:
        raise ValueError("boundary data shape does not match the grid")
    known = ~grid.interior
    if not np.all(np.isfinite(g[known])):
        raise ValueError("boundary data must be finite on all Dirichlet nodes")

    A = assemble(grid, b)
    lifted = np.where(grid.interior, 0.0, g)
    rhs = -apply_full_stencil(grid, b, lifted)
    x, report = cg_solve(A, rhs, tol=tol)
    if not report.converged:
        raise LinearSolveFailure(
            f"harmonic solve stalled: residual {report.relative_residual:.3e} "
            f"after {report.iterations} iterations")
    out = np.where(grid.interior, grid.unpack(x), g)
    return out


def apply_full_stencil(grid: Grid, b: WeightProfile, field2d: np.ndarray) -> np.ndarray:
    """Stencil applied to a full nodal field (boundary values used as
    stored), restricted to interior rows and packed."""
    c1, _, c2, _ = face_data(grid, b)
    u = np.asarray(field2d, dtype=float)
    out = np.zeros(grid.shape)
    d1 = c1 * (u[1:, :] - u[:-1, :])
    d2 = c2 * (u[:, 1:] - u[:, :-1])
    out[:-1, :] -= d1
    out[1:, :] += d1
    out[:, :-1] -= d2
    out[:, 1:] += d2
    return grid.pack(out)


def dump_matrix_market(A: SparseOperator, path) -> None:
    """Coordinate-format text dump for offline inspection."""
    from scipy.io import mmwrite

    mmwrite(path, A.matrix, symmetry="symmetric")
