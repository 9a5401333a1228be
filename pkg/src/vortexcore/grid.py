"""Structured tensor grid, nodal fields, quadrature and weighted norms.

Fields are plain (n1, n2) float arrays indexed by node, row-major in x1 so
that the flat index i1*n2 + i2 is the lexicographic node order used for
export, argmin tie-breaking and the interior index map.  Solution-type
fields carry 0 on every non-interior node; profile-type fields carry their
boundary values.

Quadrature is node-centred (trapezoid-equivalent): interior nodes own a
full h1*h2 cell, rectangle edges half cells, corners quarter cells, and
obstacle nodes own nothing.  The Dirichlet energy sums squared difference
quotients over grid faces with 1/b evaluated at face midpoints and a full
h1*h2 face volume, which makes it exactly the quadratic form of the
assembled operator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import DomainGeometry, WeightProfile, BoundaryProfile


@dataclass(frozen=True)
class Grid:
    geometry: DomainGeometry
    n1: int
    n2: int
    x1: np.ndarray = field(compare=False)           # (n1,)
    x2: np.ndarray = field(compare=False)           # (n2,)
    h1: float = 0.0
    h2: float = 0.0
    interior: np.ndarray = field(compare=False, default=None)   # (n1,n2) bool
    obstacle_mask: np.ndarray = field(compare=False, default=None)
    index: np.ndarray = field(compare=False, default=None)      # (n1,n2) int, -1 outside
    nodes: np.ndarray = field(compare=False, default=None)      # (N,2) int (i1,i2)
    mass: np.ndarray = field(compare=False, default=None)       # (n1,n2) quadrature weights

    @property
    def n_interior(self) -> int:
        return self.nodes.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    def mesh(self):
        """Node coordinates as broadcastable column/row arrays."""
        return self.x1[:, None], self.x2[None, :]

    def pack(self, field2d: np.ndarray) -> np.ndarray:
        """Interior values in index-map order."""
        return np.ascontiguousarray(field2d[self.interior])

    def unpack(self, vec: np.ndarray) -> np.ndarray:
        """Zero-extended field from interior values."""
        out = np.zeros((self.n1, self.n2))
        out[self.interior] = vec
        return out

    def zero_field(self) -> np.ndarray:
        return np.zeros((self.n1, self.n2))

    def boundary_distance_nodes(self) -> np.ndarray:
        """Distance from every node to the Dirichlet boundary."""
        from .model import MaskObstacle

        X1, X2 = self.mesh()
        d = self.geometry.boundary_distance(X1 + 0 * X2, X2 + 0 * X1)
        if isinstance(self.geometry.obstacle, MaskObstacle) and np.any(self.obstacle_mask):
            # raster obstacle: distance to nearest masked node
            ii, jj = np.nonzero(self.obstacle_mask)
            ox1, ox2 = self.x1[ii], self.x2[jj]
            px1 = np.broadcast_to(self.x1[:, None], self.shape)
            px2 = np.broadcast_to(self.x2[None, :], self.shape)
            dd = np.min(np.hypot(px1[..., None] - ox1, px2[..., None] - ox2), axis=-1)
            d = np.minimum(d, dd)
        return d


def make_grid(geometry: DomainGeometry, n1: int, n2: int) -> Grid:
    if n1 < 8 or n2 < 8:
        raise ValueError("resolution must be at least 8 nodes per axis")
    x1 = np.linspace(geometry.x1_min, geometry.x1_max, n1)
    x2 = np.linspace(geometry.x2_min, geometry.x2_max, n2)
    h1 = float(x1[1] - x1[0])
    h2 = float(x2[1] - x2[0])

    obstacle = np.zeros((n1, n2), dtype=bool)
    if geometry.obstacle is not None:
        obstacle = np.asarray(geometry.obstacle.contains(x1[:, None], x2[None, :]), dtype=bool)

    interior = np.ones((n1, n2), dtype=bool)
    interior[0, :] = interior[-1, :] = False
    interior[:, 0] = interior[:, -1] = False
    interior &= ~obstacle

    index = -np.ones((n1, n2), dtype=np.int64)
    flat = np.flatnonzero(interior.ravel())
    index.ravel()[flat] = np.arange(flat.size)
    nodes = np.argwhere(interior)

    w1 = np.full(n1, h1)
    w1[0] = w1[-1] = 0.5 * h1
    w2 = np.full(n2, h2)
    w2[0] = w2[-1] = 0.5 * h2
    mass = np.outer(w1, w2)
    mass[obstacle] = 0.0

    if nodes.size == 0:
        raise ValueError("grid has no interior nodes")
    return Grid(geometry=geometry, n1=n1, n2=n2, x1=x1, x2=x2, h1=h1, h2=h2,
                interior=interior, obstacle_mask=obstacle, index=index,
                nodes=nodes, mass=mass)


# ---------------------------------------------------------------------------
# faces
# ---------------------------------------------------------------------------

def face_data(grid: Grid, b: WeightProfile):
    """Per-face conductances c = (1/b at face midpoint) * (h_perp / h_par)
    for faces with at least one interior endpoint.

    Returns (c1, active1, c2, active2): c1 has shape (n1-1, n2) for faces
    between x1-neighbours, c2 shape (n1, n2-1) for x2-neighbours; inactive
    faces carry c = 0.
    """
    x1, x2 = grid.x1, grid.x2
    if b.analytic:
        b1 = b(0.5 * (x1[:-1] + x1[1:])[:, None], x2[None, :])
        b2 = b(x1[:, None], 0.5 * (x2[:-1] + x2[1:])[None, :])
        b1 = np.broadcast_to(b1, (grid.n1 - 1, grid.n2)).copy()
        b2 = np.broadcast_to(b2, (grid.n1, grid.n2 - 1)).copy()
    else:
        v = b.values
        if v.shape != grid.shape:
            raise ValueError("tabulated weight shape does not match the grid")
        b1 = 0.5 * (v[:-1, :] + v[1:, :])
        b2 = 0.5 * (v[:, :-1] + v[:, 1:])
    active1 = grid.interior[:-1, :] | grid.interior[1:, :]
    active2 = grid.interior[:, :-1] | grid.interior[:, 1:]
    if np.any(b1[active1] <= 0) or np.any(b2[active2] <= 0):
        raise ValueError("weight b is nonpositive at a face midpoint")
    c1 = np.where(active1, (grid.h2 / grid.h1) / np.where(active1, b1, 1.0), 0.0)
    c2 = np.where(active2, (grid.h1 / grid.h2) / np.where(active2, b2, 1.0), 0.0)
    return c1, active1, c2, active2


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def integrate(grid: Grid, f: np.ndarray, w: np.ndarray | None = None) -> float:
    """Quadrature of f*w over the domain; exact for constants on full
    rectangles."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError("field shape does not match the grid")
    integrand = grid.mass * f
    if w is not None:
        integrand = integrand * w
    return float(np.sum(integrand))


def dirichlet_energy(grid: Grid, u: np.ndarray, b: WeightProfile) -> float:
    """Integral of |grad u|^2 / b by face-midpoint quadrature; equals the
    quadratic form of ``operator.assemble(grid, b)`` on solution fields."""
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise ValueError("field shape does not match the grid")
    c1, _, c2, _ = face_data(grid, b)
    d1 = u[1:, :] - u[:-1, :]
    d2 = u[:, 1:] - u[:, :-1]
    return float(np.sum(c1 * d1 * d1) + np.sum(c2 * d2 * d2))


def sample_profile(grid: Grid, expr: WeightProfile | BoundaryProfile) -> np.ndarray:
    """Nodal values of a weight or boundary profile, boundary nodes
    included."""
    if expr.analytic:
        X1, X2 = grid.mesh()
        vals = np.asarray(expr(X1 + 0 * X2, X2 + 0 * X1), dtype=float)
        vals = np.broadcast_to(vals, grid.shape).copy()
    else:
        vals = np.asarray(expr.values, dtype=float)
        if vals.shape != grid.shape:
            raise ValueError("tabulated profile shape does not match the grid")
        vals = vals.copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError("profile evaluation produced non-finite values")
    return vals


def export_field_csv(grid: Grid, values: np.ndarray, path) -> None:
    """CSV dump with columns x1, x2, value in lexicographic node order."""
    values = np.asarray(values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "value"])
        for i in range(grid.n1):
            for j in range(grid.n2):
                writer.writerow([f"{grid.x1[i]:.17g}", f"{grid.x2[j]:.17g}",
                                 f"{values[i, j]:.17g}"])
