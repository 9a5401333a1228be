"""Variational core: the truncated energy, its gradient, the ray constraint
and the exact identities used as solution certificates.

For a spec with weight b, profile q and parameters (eps, p), let
lam = log(1/eps) and q_lam = lam*q.  The energy of a solution field u is

    E(u) = 1/2 int |grad u|^2 / b
           - 1/((p+1) eps^2) int b (u - q_lam)_+^(p+1)

with the quadratic part taken as the operator's quadratic form and the
truncated term by nodal quadrature.  Stationary points solve the discrete
scheme  A u = m * (b/eps^2) (u - q_lam)_+^p  with m the quadrature mass.

All comparisons against the threshold are done on u - q_lam directly: the
log amplification makes q_lam large, and forming u/q_lam ratios would lose
the small positive part to cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import operator as op
from .grid import Grid, make_grid, face_data, sample_profile
from .model import ProblemSpec, WeightProfile


class NoNehariRoot(RuntimeError):
    """The ray t -> t*u never crosses the constraint set within budget."""


# ---------------------------------------------------------------------------
# discretization context
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Discretization:
    """One spec sampled on one grid, with the assembled operator.

    Shared, immutable and reusable across epsilon values of the same
    geometry via :meth:`with_epsilon`.
    """

    spec: ProblemSpec
    grid: Grid
    A: op.SparseOperator
    b_nodes: np.ndarray      # (n1,n2)
    q_nodes: np.ndarray      # (n1,n2), boundary values included
    q_eps: np.ndarray        # log(1/eps) * q
    mass: np.ndarray         # quadrature weights, zero off-domain

    @property
    def eps(self) -> float:
        return self.spec.epsilon

    @property
    def p(self) -> float:
        return self.spec.p

    def with_epsilon(self, epsilon: float) -> "Discretization":
        spec = self.spec.with_epsilon(epsilon)
        return replace(self, spec=spec, q_eps=spec.log_inv_eps * self.q_nodes)

    def pack(self, u):
        return self.grid.pack(u)

    def unpack(self, v):
        return self.grid.unpack(v)


def discretize(spec: ProblemSpec, n1: int, n2: int) -> Discretization:
    grid = make_grid(spec.geometry, n1, n2)
    b_nodes = sample_profile(grid, spec.weight)
    q_nodes = sample_profile(grid, spec.profile)
    if np.any(q_nodes[grid.interior] <= 0):
        raise ValueError("profile q must be strictly positive at interior nodes")
    if np.any(b_nodes[grid.interior] <= 0):
        raise ValueError("weight b must be strictly positive at interior nodes")
    A = op.assemble(grid, spec.weight)
    return Discretization(spec=spec, grid=grid, A=A, b_nodes=b_nodes,
                          q_nodes=q_nodes, q_eps=spec.log_inv_eps * q_nodes,
                          mass=grid.mass)


# ---------------------------------------------------------------------------
# energy, gradient, constraint
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyBreakdown:
    quadratic: float      # 1/2 int |grad u|^2 / b
    nonlinear: float      # 1/((p+1) eps^2) int b (u - q_eps)_+^(p+1)
    total: float
    pairing: float        # <E'(u), u>


def _positive_part(disc: Discretization, u: np.ndarray) -> np.ndarray:
    # non-interior nodes never activate: u = 0 there and q_eps >= 0
    return np.where(disc.grid.interior, np.maximum(u - disc.q_eps, 0.0), 0.0)


def energy(disc: Discretization, u: np.ndarray) -> EnergyBreakdown:
    uv = disc.pack(u)
    quad = 0.5 * disc.A.quadratic_form(uv)
    pos = _positive_part(disc, u)
    w = disc.mass * disc.b_nodes
    e2 = disc.eps * disc.eps
    p = disc.p
    nonlin = float(np.sum(w * pos ** (p + 1))) / ((p + 1) * e2)
    pairing = 2.0 * quad - float(np.sum(w * pos**p * u)) / e2
    total = quad - nonlin
    if not (math.isfinite(total) and math.isfinite(pairing)):
        raise FloatingPointError("energy evaluation produced non-finite values")
    return EnergyBreakdown(quadratic=quad, nonlinear=nonlin, total=total, pairing=pairing)


def gradient(disc: Discretization, u: np.ndarray) -> np.ndarray:
    """Euclidean (dual) gradient: A u - m * (b/eps^2)(u - q_eps)_+^p, as a
    zero-extended nodal field.  Its plain dot product with a direction is
    the directional derivative of the energy."""
    uv = disc.pack(u)
    pos = _positive_part(disc, u)
    f = disc.mass * disc.b_nodes * pos**disc.p / (disc.eps * disc.eps)
    out = disc.unpack(disc.A.matvec(uv))
    out[disc.grid.interior] -= f[disc.grid.interior]
    return out


def nehari_h(disc: Discretization, u: np.ndarray, t: float) -> float:
    """h(t) = <E'(t u), t u> along the ray through u."""
    uv = disc.pack(u)
    quad2 = disc.A.quadratic_form(uv)
    return _nehari_h_cached(disc, u, quad2, t)


def _nehari_h_cached(disc: Discretization, u: np.ndarray, quad2: float, t: float) -> float:
    pos = np.where(disc.grid.interior, np.maximum(t * u - disc.q_eps, 0.0), 0.0)
    w = disc.mass * disc.b_nodes
    return t * t * quad2 - float(np.sum(w * pos**disc.p * (t * u))) / (disc.eps**2)


def nehari_project(disc: Discretization, u: np.ndarray,
                   t_max: float = 1e8) -> tuple[float, np.ndarray]:
    """Scale u onto the constraint set: find t* > 0 with h(t*) = 0 by
    exponential bracketing upward from t = 1 followed by bisection to
    relative width 1e-13.  Raises :class:`NoNehariRoot` when the ray never
    crosses (e.g. the positive part never activates)."""
    uv = disc.pack(u)
    quad2 = disc.A.quadratic_form(uv)
    if quad2 <= 0.0:
        raise NoNehariRoot("cannot project the zero field")

    def h(t):
        return _nehari_h_cached(disc, u, quad2, t)

    h1 = h(1.0)
    if abs(h1) <= 1e-12 * quad2:
        return 1.0, u.copy()
    if h1 > 0.0:
        lo, hi = 1.0, 2.0
        while h(hi) > 0.0:
            lo, hi = hi, 2.0 * hi
            if hi > t_max:
                raise NoNehariRoot(f"h stayed positive up to t = {t_max:g}")
    else:
        lo, hi = 0.5, 1.0
        while h(lo) <= 0.0:
            lo, hi = 0.5 * lo, lo
            if lo < 1e-30:
                raise NoNehariRoot("no positive lower bracket endpoint")
    # invariant: h(lo) > 0 >= h(hi)
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if h(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    t_star = 0.5 * (lo + hi)
    return t_star, t_star * u


# ---------------------------------------------------------------------------
# identities and inequalities as residuals
# ---------------------------------------------------------------------------

def energy_lower_bound_residual(disc: Discretization, u: np.ndarray) -> float:
    """Defect of (1/2 - 1/(p+1)) ||u||^2 <= E(u) - <E'(u),u>/(p+1).

    Discretely the difference equals 1/((p+1) eps^2) int b (u-q_eps)_+^p
    q_eps, which is nonnegative whenever q >= 0; anything below -1e-12 *
    scale indicates a broken quadrature pairing."""
    bd = energy(disc, u)
    p = disc.p
    lhs = (0.5 - 1.0 / (p + 1.0)) * 2.0 * bd.quadratic
    rhs = bd.total - bd.pairing / (p + 1.0)
    return rhs - lhs


def change_weight_residual(disc: Discretization, u: np.ndarray,
                           q_harmonic: np.ndarray | None = None) -> float:
    """Relative gap between int |grad u|^2 / b and int (q^2/b) |grad(u/q)|^2.

    Exact in the continuum for weighted-harmonic q; on the grid the gap is
    pure discretization error and shrinks with h."""
    q = disc.q_nodes if q_harmonic is None else np.asarray(q_harmonic, dtype=float)
    if np.any(q[disc.grid.interior] <= 0):
        raise ValueError("change-of-weight ratio needs q > 0")
    grid = disc.grid
    ratio = np.zeros(grid.shape)
    np.divide(u, q, out=ratio, where=q > 0)

    c1, _, c2, _ = face_data(grid, disc.spec.weight)
    # face weights q^2/b: reuse 1/b conductances and multiply by q^2 at midpoints
    if disc.spec.profile.analytic and q_harmonic is None:
        x1, x2 = grid.x1, grid.x2
        q1 = disc.spec.profile(0.5 * (x1[:-1] + x1[1:])[:, None], x2[None, :])
        q2 = disc.spec.profile(x1[:, None], 0.5 * (x2[:-1] + x2[1:])[None, :])
        q1 = np.broadcast_to(q1, c1.shape)
        q2 = np.broadcast_to(q2, c2.shape)
    else:
        q1 = 0.5 * (q[:-1, :] + q[1:, :])
        q2 = 0.5 * (q[:, :-1] + q[:, 1:])
    d1 = ratio[1:, :] - ratio[:-1, :]
    d2 = ratio[:, 1:] - ratio[:, :-1]
    rhs = float(np.sum(c1 * (q1 * d1) ** 2) + np.sum(c2 * (q2 * d2) ** 2))
    lhs = disc.A.quadratic_form(disc.pack(u))
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale


@dataclass(frozen=True)
class IdentityResiduals:
    """Relative defects of the two core identities.

    ``res_a``/``res_b`` pair the equation against min(u, q_eps) and
    (u - q_eps)_+ respectively, which is exact at discrete solutions up to
    solver tolerance for any q.  ``res_a_face``/``res_b_face`` evaluate the
    core Dirichlet term geometrically over faces inside the core (half
    weight on free-boundary faces) and converge like O(h)."""

    res_a: float
    res_b: float
    res_a_face: float
    res_b_face: float
    empty_core: bool


def _relative_gap(lhs: float, rhs: float) -> float:
    scale = max(abs(lhs), abs(rhs))
    if scale == 0.0:
        return 0.0
    return abs(lhs - rhs) / scale


def integral_identities(disc: Discretization, u: np.ndarray) -> IdentityResiduals:
    """Residuals of the vortex-core integral identities

        (a) 1/eps^2 int b (u-q_eps)_+^p q_eps
              = int |grad u|^2/b - int_core |grad(u-q_eps)|^2/b
        (b) 1/eps^2 int_core b (u-q_eps)_+^(p+1)
              = int_core |grad(u-q_eps)|^2/b

    evaluated both through the operator pairing (exact at solutions) and
    through the face-restricted core gradient."""
    grid = disc.grid
    pos = _positive_part(disc, u)
    core = (pos > 0.0) & grid.interior
    e2 = disc.eps**2
    w = disc.mass * disc.b_nodes

    lhs_a = float(np.sum(w * pos**disc.p * disc.q_eps)) / e2
    lhs_b = float(np.sum(w * pos ** (disc.p + 1.0))) / e2

    uv = disc.pack(u)
    phi = np.where(core, pos, 0.0)
    Au = disc.A.matvec(uv)
    phi_Au = float(disc.pack(phi) @ Au)
    total = float(uv @ Au)

    res_a = _relative_gap(lhs_a, total - phi_Au)
    res_b = _relative_gap(lhs_b, phi_Au)

    # geometric variant: restrict grad(u - q_eps) to core faces
    psi = u - disc.q_eps
    c1, _, c2, _ = face_data(grid, disc.spec.weight)
    core1 = core[:-1, :].astype(float) + core[1:, :]
    core2 = core[:, :-1].astype(float) + core[:, 1:]
    w1 = 0.5 * core1          # 1 on interior-core faces, 1/2 on free boundary
    w2 = 0.5 * core2
    d1 = psi[1:, :] - psi[:-1, :]
    d2 = psi[:, 1:] - psi[:, :-1]
    core_energy = float(np.sum(w1 * c1 * d1 * d1) + np.sum(w2 * c2 * d2 * d2))
    res_a_face = _relative_gap(lhs_a, total - core_energy)
    res_b_face = _relative_gap(lhs_b, core_energy)

    return IdentityResiduals(res_a=res_a, res_b=res_b,
                             res_a_face=res_a_face, res_b_face=res_b_face,
                             empty_core=not bool(np.any(core)))


def hardy_check(grid: Grid, alpha: float, u: np.ndarray,
                slack: float = 0.05) -> tuple[float, float, bool]:
    """Weighted Hardy inequality with constant (2/(alpha+1))^2:

        int u^2 / x1^(alpha+2)  <=  (2/(alpha+1))^2 int |grad u|^2 / x1^alpha

    for u vanishing on the boundary.  Both sides by quadrature away from
    the axis column; ``ok`` allows the given relative slack for quadrature
    error near the axis."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    u = np.asarray(u, dtype=float)
    x1 = grid.x1
    pos = x1 > 0
    lhs_weights = np.zeros_like(x1)
    lhs_weights[pos] = x1[pos] ** (-(alpha + 2.0))
    lhs = float(np.sum(grid.mass * u * u * lhs_weights[:, None]))

    c1, _, c2, _ = face_data(grid, WeightProfile.power(alpha))
    d1 = u[1:, :] - u[:-1, :]
    d2 = u[:, 1:] - u[:, :-1]
    energy_alpha = float(np.sum(c1 * d1 * d1) + np.sum(c2 * d2 * d2))
    rhs = (2.0 / (alpha + 1.0)) ** 2 * energy_alpha
    return lhs, rhs, lhs <= rhs * (1.0 + slack)
