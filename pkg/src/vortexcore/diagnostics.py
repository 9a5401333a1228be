"""Vortex-core statistics, circulation, trend fits and flow reconstruction.

The core is the strict super-level set {u > log(1/eps) q} of a computed
state.  Circulation is kappa = (1/eps^2) int (u - q_eps)_+^p with the plain
area measure of the computational plane, which is the quantity whose
normalized limit is 2 pi q/b at the concentration point in both the
axisymmetric and the lake interpretation.

Flow reconstruction goes through the stream function psi = u - q_eps on
the staggered face grid, so the discrete divergence of the mass flux b*v
vanishes identically (up to rounding), and the vorticity support coincides
bitwise with the core node set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .energy import Discretization, energy
from .model import PredictedTarget, predicted_target
from .solver import SolveResult, SolverOptions, continuation


class EmptyCore(RuntimeError):
    """u never exceeds the scaled profile: not a solution, or eps too large."""


FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True)
class CoreStats:
    mask: np.ndarray                 # (n1,n2) bool, strict threshold
    area: float
    diameter: float
    peak: tuple[float, float]        # a_eps = argmax(u - q_eps)
    peak_node: tuple[int, int]
    centroid: tuple[float, float]
    boundary_distance: float
    components: int


def extract_core(disc: Discretization, u: np.ndarray) -> CoreStats:
    grid = disc.grid
    excess = np.where(grid.interior, u - disc.q_eps, -np.inf)
    mask = excess > 0.0
    if not np.any(mask):
        raise EmptyCore("u <= q_eps everywhere")

    _, count = ndimage.label(mask, structure=FOUR_CONNECTED)
    k = int(np.argmax(np.where(mask, excess, -np.inf)))
    pi, pj = divmod(k, grid.n2)

    area = float(np.sum(grid.mass[mask]))
    x1m = np.broadcast_to(grid.x1[:, None], grid.shape)
    x2m = np.broadcast_to(grid.x2[None, :], grid.shape)
    m = grid.mass[mask]
    wsum = float(np.sum(m))
    if wsum > 0:
        centroid = (float(np.sum(m * x1m[mask]) / wsum),
                    float(np.sum(m * x2m[mask]) / wsum))
    else:  # degenerate single-node core on a zero-mass node
        centroid = (float(x1m[pi, pj]), float(x2m[pi, pj]))

    rim = mask & ~(
        np.roll(mask, 1, 0) & np.roll(mask, -1, 0)
        & np.roll(mask, 1, 1) & np.roll(mask, -1, 1))
    # np.roll wraps around; nodes on the grid edge are never in the core so
    # the wrap never fabricates neighbours
    bx1, bx2 = x1m[rim], x2m[rim]
    # diameter of the rasterized region: each node owns its h1 x h2 cell,
    # so the extremal pair gains half a cell at both ends per direction
    diameter = float(np.max(np.hypot(
        np.abs(bx1[:, None] - bx1[None, :]) + grid.h1,
        np.abs(bx2[:, None] - bx2[None, :]) + grid.h2)))
    dist = grid.boundary_distance_nodes()
    return CoreStats(
        mask=mask, area=area, diameter=diameter,
        peak=(float(grid.x1[pi]), float(grid.x2[pj])), peak_node=(pi, pj),
        centroid=centroid,
        boundary_distance=float(np.min(dist[mask])),
        components=int(count))


def circulation(disc: Discretization, u: np.ndarray) -> float:
    """kappa = (1/eps^2) int b (u - q_eps)_+^p: the area integral of the
    scalar vorticity curl(v) = -div(grad(psi)/b) = (b/eps^2) psi_+^p over
    the computational plane.  For rings (b = r) this is the flux of the
    azimuthal vorticity through the meridian half-plane, i.e. the line
    integral of the velocity around the core; its normalized limit is
    2 pi q(a)/b(a)."""
    grid = disc.grid
    pos = np.where(grid.interior, np.maximum(u - disc.q_eps, 0.0), 0.0)
    return float(np.sum(grid.mass * disc.b_nodes * pos**disc.p)) / disc.eps**2


# ---------------------------------------------------------------------------
# per-epsilon report rows and trend fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    epsilon: float
    energy: float
    kappa: float
    kappa_normalized: float          # kappa * b(a_eps)/q(a_eps), limit 2 pi
    energy_over_pilog: float         # E / (pi log(1/eps)), limit inf q^2/b
    q2_over_b_at_peak: float
    upper_bound_ratio: float         # E / (pi log(1/eps) inf q^2/b)
    diameter: float
    diam_over_eps: float
    core_area: float
    components: int
    peak: tuple[float, float]
    centroid: tuple[float, float]
    b_at_peak: float
    q_at_peak: float
    boundary_distance: float
    converged: bool
    iterations: int
    grad_norm: float
    nehari_residual: float


@dataclass(frozen=True)
class TrendFit:
    diameter_slope: float            # d log(diam) / d log(eps), limit 1
    diam_over_eps_min: float
    diam_over_eps_max: float
    points: int


def energy_report(disc: Discretization, result: SolveResult,
                  predicted: PredictedTarget | None = None) -> ReportRow:
    if predicted is None:
        predicted = predicted_target(disc)
    stats = extract_core(disc, result.u)
    kappa = circulation(disc, result.u)
    i, j = stats.peak_node
    b_peak = float(disc.b_nodes[i, j])
    q_peak = float(disc.q_nodes[i, j])
    loglam = disc.spec.log_inv_eps
    E = result.breakdown.total
    inf_ratio = predicted.limit_energy_density
    return ReportRow(
        epsilon=disc.eps, energy=E, kappa=kappa,
        kappa_normalized=kappa * b_peak / q_peak,
        energy_over_pilog=E / (math.pi * loglam),
        q2_over_b_at_peak=q_peak**2 / b_peak,
        upper_bound_ratio=E / (math.pi * loglam * inf_ratio),
        diameter=stats.diameter, diam_over_eps=stats.diameter / disc.eps,
        core_area=stats.area, components=stats.components,
        peak=stats.peak, centroid=stats.centroid,
        b_at_peak=b_peak, q_at_peak=q_peak,
        boundary_distance=stats.boundary_distance,
        converged=result.converged, iterations=result.iterations,
        grad_norm=result.grad_norm, nehari_residual=result.nehari_residual)


def diameter_scaling(rows: list[ReportRow]) -> TrendFit:
    """Least-squares slope of log(diam) against log(eps) over a sweep."""
    if len(rows) < 3:
        raise ValueError("diameter scaling needs at least 3 epsilon values")
    eps = np.array([r.epsilon for r in rows])
    diam = np.array([r.diameter for r in rows])
    if np.any(diam <= 0):
        raise ValueError("diameter scaling needs nonempty cores")
    slope = float(np.polyfit(np.log(eps), np.log(diam), 1)[0])
    ratios = diam / eps
    return TrendFit(diameter_slope=slope,
                    diam_over_eps_min=float(np.min(ratios)),
                    diam_over_eps_max=float(np.max(ratios)),
                    points=len(rows))


# ---------------------------------------------------------------------------
# flow reconstruction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowFields:
    """Velocity on faces, vorticity and pressure head on nodes.

    ``v1`` lives on x1-faces (shape (n1-1, n2)): the x2-velocity component
    for rings (axial) and the x1-component's conjugate for lakes -- see the
    constructors.  ``v2`` lives on x2-faces (shape (n1, n2-1)).
    """

    kind: str                        # "ring" | "lake"
    psi: np.ndarray                  # stream function u - q_eps, all nodes
    v1: np.ndarray = field(compare=False, default=None)
    v2: np.ndarray = field(compare=False, default=None)
    vorticity: np.ndarray = field(compare=False, default=None)
    head: np.ndarray = field(compare=False, default=None)
    core_mask: np.ndarray = field(compare=False, default=None)
    _disc: Discretization = field(compare=False, default=None)

    def circulation(self) -> float:
        """Same quadrature as :func:`circulation`; agreement is exact."""
        return circulation(self._disc, self.psi + self._disc.q_eps)


def _face_midpoint_weight(disc: Discretization):
    grid = disc.grid
    b = disc.spec.weight
    x1, x2 = grid.x1, grid.x2
    if b.analytic:
        b1 = np.broadcast_to(b(0.5 * (x1[:-1] + x1[1:])[:, None], x2[None, :]),
                             (grid.n1 - 1, grid.n2))
        b2 = np.broadcast_to(b(x1[:, None], 0.5 * (x2[:-1] + x2[1:])[None, :]),
                             (grid.n1, grid.n2 - 1))
    else:
        v = disc.b_nodes
        b1 = 0.5 * (v[:-1, :] + v[1:, :])
        b2 = 0.5 * (v[:, :-1] + v[:, 1:])
    return np.asarray(b1, dtype=float), np.asarray(b2, dtype=float)


def reconstruct_euler_flow(disc: Discretization, u: np.ndarray) -> FlowFields:
    """Axisymmetric flow from the stream function psi = u - q_eps:
    v_r = -(1/r) dpsi/dz on x2-faces, v_z = (1/r) dpsi/dr on x1-faces,
    azimuthal vorticity (r/eps^2) psi_+^p, total head F(psi) with static
    pressure F(psi) - |v|^2/2."""
    if disc.spec.scenario != "ring":
        raise ValueError("Euler reconstruction needs a ring scenario")
    grid = disc.grid
    psi = np.where(grid.interior, u, 0.0) - disc.q_eps
    b1, b2 = _face_midpoint_weight(disc)     # = r at face midpoints

    v_z = (psi[1:, :] - psi[:-1, :]) / grid.h1 / b1          # x1-faces
    dz = (psi[:, 1:] - psi[:, :-1]) / grid.h2
    r_nodes = grid.x1[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        v_r = np.where(r_nodes > 0, -dz / np.where(r_nodes > 0, r_nodes, 1.0), 0.0)

    pos = np.where(grid.interior, np.maximum(psi, 0.0), 0.0)
    vort = r_nodes * pos**disc.p / disc.eps**2
    vort = np.where(grid.interior, vort, 0.0)

    p = disc.p
    F = pos ** (p + 1.0) / ((p + 1.0) * disc.eps**2)
    speed2 = _node_speed_squared(grid, v_r, v_z)
    head = F - 0.5 * speed2
    core = pos > 0.0
    return FlowFields(kind="ring", psi=psi, v1=v_z, v2=v_r,
                      vorticity=vort, head=head, core_mask=core, _disc=disc)


def reconstruct_lake_flow(disc: Discretization, u: np.ndarray) -> FlowFields:
    """Planar lake flow: v = (dpsi/dx2, -dpsi/dx1)/b on faces, vorticity
    curl(v) = (b/eps^2) psi_+^p, height F(psi) - |v|^2/2."""
    if disc.spec.scenario != "lake":
        raise ValueError("lake reconstruction needs a lake scenario")
    grid = disc.grid
    psi = np.where(grid.interior, u, 0.0) - disc.q_eps
    b1, b2 = _face_midpoint_weight(disc)

    vx1 = (psi[:, 1:] - psi[:, :-1]) / grid.h2 / b2          # x2-faces
    vx2 = -(psi[1:, :] - psi[:-1, :]) / grid.h1 / b1         # x1-faces

    pos = np.where(grid.interior, np.maximum(psi, 0.0), 0.0)
    vort = disc.b_nodes * pos**disc.p / disc.eps**2
    vort = np.where(grid.interior, vort, 0.0)
    p = disc.p
    F = pos ** (p + 1.0) / ((p + 1.0) * disc.eps**2)
    speed2 = _node_speed_squared(grid, vx1, vx2)
    head = F - 0.5 * speed2
    core = pos > 0.0
    return FlowFields(kind="lake", psi=psi, v1=vx2, v2=vx1,
                      vorticity=vort, head=head, core_mask=core, _disc=disc)


def _node_speed_squared(grid, v_on_x2_faces, v_on_x1_faces):
    """|v|^2 at nodes by averaging adjacent face values per component."""
    a = np.zeros(grid.shape)
    a[:, 1:-1] = 0.5 * (v_on_x2_faces[:, :-1] + v_on_x2_faces[:, 1:])
    a[:, 0] = v_on_x2_faces[:, 0]
    a[:, -1] = v_on_x2_faces[:, -1]
    b = np.zeros(grid.shape)
    b[1:-1, :] = 0.5 * (v_on_x1_faces[:-1, :] + v_on_x1_faces[1:, :])
    b[0, :] = v_on_x1_faces[0, :]
    b[-1, :] = v_on_x1_faces[-1, :]
    return a * a + b * b


def mass_flux_divergence(flow: FlowFields) -> float:
    """Max dual-cell divergence of the mass flux b*v; zero to rounding
    because v comes from a stream function.

    The x1-component of b*v lives on x2-faces (array G2, shape (n1, n2-1))
    and the x2-component on x1-faces (G1, shape (n1-1, n2)); the divergence
    telescopes per dual cell."""
    disc = flow._disc
    grid = disc.grid
    b1, b2 = _face_midpoint_weight(disc)
    G1 = b1 * flow.v1                        # x2-component of b*v on x1-faces
    if flow.kind == "ring":
        G2 = grid.x1[:, None] * flow.v2      # r*v_r on x2-faces, r at the node
    else:
        G2 = b2 * flow.v2
    div = (G2[1:, :] - G2[:-1, :]) / grid.h1 + (G1[:, 1:] - G1[:, :-1]) / grid.h2
    return float(np.max(np.abs(div)))


def loop_circulation(flow: FlowFields, margin_cells: int = 2) -> float:
    """Line integral of the in-plane velocity around the smallest grid
    rectangle enclosing the core with the given margin; matches kappa to
    O(h) by the discrete Stokes theorem."""
    disc = flow._disc
    grid = disc.grid
    core = flow.core_mask
    ii, jj = np.nonzero(core)
    i0 = max(int(ii.min()) - margin_cells, 1)
    i1 = min(int(ii.max()) + margin_cells, grid.n1 - 2)
    j0 = max(int(jj.min()) - margin_cells, 1)
    j1 = min(int(jj.max()) + margin_cells, grid.n2 - 2)

    psi = flow.psi
    if flow.kind == "ring":
        # v = (v_r, v_z) in the (r=x1, z=x2) plane
        def v_x1(i, j):   # v_r at node: average of adjacent x2-faces
            if grid.x1[i] == 0:
                return 0.0
            left = (psi[i, j] - psi[i, j - 1]) / grid.h2 if j > 0 else None
            right = (psi[i, j + 1] - psi[i, j]) / grid.h2 if j < grid.n2 - 1 else None
            vals = [s for s in (left, right) if s is not None]
            return -sum(vals) / len(vals) / grid.x1[i]

        def v_x2(i, j):   # v_z at node: average of adjacent x1-faces
            lo = (psi[i, j] - psi[i - 1, j]) / grid.h1 / (grid.x1[i] - 0.5 * grid.h1) if i > 0 else None
            hi = (psi[i + 1, j] - psi[i, j]) / grid.h1 / (grid.x1[i] + 0.5 * grid.h1) if i < grid.n1 - 1 else None
            vals = [s for s in (lo, hi) if s is not None]
            return sum(vals) / len(vals)
    else:
        def v_x1(i, j):
            b = disc.b_nodes[i, j]
            left = (psi[i, j] - psi[i, j - 1]) / grid.h2 if j > 0 else None
            right = (psi[i, j + 1] - psi[i, j]) / grid.h2 if j < grid.n2 - 1 else None
            vals = [s for s in (left, right) if s is not None]
            return sum(vals) / len(vals) / b

        def v_x2(i, j):
            b = disc.b_nodes[i, j]
            lo = (psi[i, j] - psi[i - 1, j]) / grid.h1 if i > 0 else None
            hi = (psi[i + 1, j] - psi[i, j]) / grid.h1 if i < grid.n1 - 1 else None
            vals = [s for s in (lo, hi) if s is not None]
            return -sum(vals) / len(vals) / b

    total = 0.0
    for i in range(i0, i1):          # bottom edge, +x1 direction
        total += 0.5 * (v_x1(i, j0) + v_x1(i + 1, j0)) * grid.h1
    for j in range(j0, j1):          # right edge, +x2
        total += 0.5 * (v_x2(i1, j) + v_x2(i1, j + 1)) * grid.h2
    for i in range(i1, i0, -1):      # top edge, -x1
        total -= 0.5 * (v_x1(i, j1) + v_x1(i - 1, j1)) * grid.h1
    for j in range(j1, j0, -1):      # left edge, -x2
        total -= 0.5 * (v_x2(i0, j) + v_x2(i0, j - 1)) * grid.h2
    return abs(total)


# ---------------------------------------------------------------------------
# energy-level comparison between an exterior spec and its invariant twin
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrictGap:
    c_eps: float
    c_eps_infinity: float
    gap: float


def strict_inequality_check(spec_exterior, spec_invariant, n1: int, n2: int,
                            opts: SolverOptions | None = None) -> StrictGap:
    """Solve both problems on the same grid footprint and compare levels;
    a positive gap (invariant above exterior) is the desingularization
    hypothesis checked numerically."""
    g1, g2 = spec_exterior.geometry, spec_invariant.geometry
    if (g1.x1_min, g1.x1_max, g1.x2_min, g1.x2_max) != (g2.x1_min, g2.x1_max, g2.x2_min, g2.x2_max):
        raise ValueError("both specs must share the grid footprint")
    res_ext, _ = continuation(spec_exterior, [spec_exterior.epsilon], n1, n2, opts)
    res_inv, _ = continuation(spec_invariant, [spec_invariant.epsilon], n1, n2, opts)
    c = res_ext[0].breakdown.total
    c_inf = res_inv[0].breakdown.total
    return StrictGap(c_eps=c, c_eps_infinity=c_inf, gap=c_inf - c)
