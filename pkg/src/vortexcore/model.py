"""Scenario definitions: domain geometry, weight b, boundary profile q.

A scenario is one instance of the truncated weighted semilinear problem

    -div(grad(u)/b) = (b/eps^2) (u - log(1/eps) q)_+^p   in Omega,
    u = 0 on the boundary,

posed on a rectangle in the (x1, x2) plane, possibly with a rasterized
obstacle removed.  For axisymmetric flow x1 is the distance r to the
symmetry axis and b(r, z) = r; for shallow lakes b is the depth.

The preset constructors encode the admissible background profiles q for
which the p-truncation concentrates vorticity at the minimizer of q^2/b:

    whole space:   q = W r^2/2 + (3/(8W)) (kappa/(2 pi))^2
    cylinder:      q = W r^2/2 + (kappa/(2 pi) - W/2)    for kappa >= 4 pi W
    outside ball:  q = (W/2)(r^2 - r/(r^2+z^2)) + const, two kappa branches
    lake:          q = (kappa/(2 pi)) sup b,  or  q = -psi0 for a given
                   strictly negative background stream function psi0

Each preset records the analytic prediction of where the core should sit
(radius r_star resp. the depth maximizer) so sweeps can be checked against
it.  All objects here are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Disc:
    """Circular obstacle; for axisymmetric scenarios this is the meridian
    section of a ball centred on the axis."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")

    def contains(self, x1, x2):
        c1, c2 = self.center
        return (np.asarray(x1) - c1) ** 2 + (np.asarray(x2) - c2) ** 2 <= self.radius**2

    def boundary_distance(self, x1, x2):
        c1, c2 = self.center
        d = np.hypot(np.asarray(x1) - c1, np.asarray(x2) - c2) - self.radius
        return d


@dataclass(frozen=True)
class MaskObstacle:
    """Obstacle given by an inside-predicate, rasterized on whatever grid
    samples it."""

    inside: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def contains(self, x1, x2):
        return np.asarray(self.inside(np.asarray(x1), np.asarray(x2)), dtype=bool)

    def boundary_distance(self, x1, x2):
        # no analytic distance for a raster mask; grids fall back to the
        # nearest masked node
        return None


@dataclass(frozen=True)
class DomainGeometry:
    """Bounding rectangle [x1_min,x1_max] x [x2_min,x2_max], axis flag,
    optional obstacle, truncation flag for artificially bounded domains."""

    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float
    axis: bool = False
    obstacle: Disc | MaskObstacle | None = None
    truncated: bool = False

    def __post_init__(self):
        if not (self.x1_max > self.x1_min and self.x2_max > self.x2_min):
            raise ValueError("rectangle must have positive area")
        if self.axis and self.x1_min != 0.0:
            raise ValueError("axis flag requires x1_min = 0")
        if isinstance(self.obstacle, Disc):
            c1, c2 = self.obstacle.center
            r = self.obstacle.radius
            # the obstacle may touch the axis column (meridian section of a
            # body centred on the symmetry axis) but not the outer edges
            left_ok = c1 - r >= self.x1_min - 1e-12 if self.axis else c1 - r > self.x1_min
            if not left_ok:
                raise ValueError("obstacle crosses the left rectangle edge")
            if not (c1 + r < self.x1_max and self.x2_min < c2 - r and c2 + r < self.x2_max):
                raise ValueError("obstacle must lie strictly inside the rectangle")

    def boundary_distance(self, x1, x2):
        """Distance to the Dirichlet boundary (rectangle edges + obstacle)."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        d = np.minimum.reduce([
            x1 - self.x1_min, self.x1_max - x1,
            x2 - self.x2_min, self.x2_max - x2,
        ])
        if self.obstacle is not None:
            dob = self.obstacle.boundary_distance(x1, x2)
            if dob is not None:
                d = np.minimum(d, dob)
        return d


# ---------------------------------------------------------------------------
# weight b
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightProfile:
    """Weight b > 0.  Kinds: power b = x1^alpha, a small analytic lake-depth
    family (constant, Gaussian bump, linear ramp), or tabulated nodal values.
    """

    kind: str
    alpha: float = 0.0
    base: float = 1.0
    amplitude: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    width: float = 1.0
    slope: tuple[float, float] = (0.0, 0.0)
    values: np.ndarray | None = field(default=None, compare=False)

    @staticmethod
    def power(alpha: float) -> "WeightProfile":
        if alpha < 0:
            raise ValueError("power weight needs alpha >= 0")
        return WeightProfile(kind="power", alpha=alpha)

    @staticmethod
    def constant(value: float) -> "WeightProfile":
        if value <= 0:
            raise ValueError("constant depth must be positive")
        return WeightProfile(kind="constant", base=value)

    @staticmethod
    def gaussian_bump(center, amplitude: float, width: float, base: float = 1.0) -> "WeightProfile":
        if base <= 0 or base + min(amplitude, 0.0) <= 0:
            raise ValueError("depth must stay positive")
        if width <= 0:
            raise ValueError("gaussian width must be positive")
        return WeightProfile(kind="gaussian", base=base, amplitude=amplitude,
                             center=(float(center[0]), float(center[1])), width=width)

    @staticmethod
    def ramp(base: float, slope) -> "WeightProfile":
        return WeightProfile(kind="ramp", base=base, slope=(float(slope[0]), float(slope[1])))

    @staticmethod
    def tabulated(values: np.ndarray) -> "WeightProfile":
        v = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("tabulated weight has non-finite entries")
        return WeightProfile(kind="tabulated", values=v)

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self.kind == "power":
            return x1**self.alpha if self.alpha != 0 else np.ones_like(x1)
        if self.kind == "constant":
            return np.full(np.broadcast(x1, x2).shape, self.base)
        if self.kind == "gaussian":
            c1, c2 = self.center
            return self.base + self.amplitude * np.exp(
                -((x1 - c1) ** 2 + (x2 - c2) ** 2) / self.width**2)
        if self.kind == "ramp":
            s1, s2 = self.slope
            return self.base + s1 * x1 + s2 * x2
        if self.kind == "tabulated":
            raise ValueError("tabulated weight is only defined at its own grid nodes")
        raise ValueError(f"unknown weight kind {self.kind!r}")

    @property
    def analytic(self) -> bool:
        return self.kind != "tabulated"

    def supremum(self, geom: DomainGeometry) -> float:
        """Supremum of b over the closed rectangle."""
        if self.kind == "power":
            return geom.x1_max**self.alpha
        if self.kind == "constant":
            return self.base
        if self.kind == "gaussian":
            # sup at the bump centre when inside; corners otherwise
            c1, c2 = self.center
            if (self.amplitude >= 0 and geom.x1_min <= c1 <= geom.x1_max
                    and geom.x2_min <= c2 <= geom.x2_max):
                return self.base + self.amplitude
            corners = [(geom.x1_min, geom.x2_min), (geom.x1_min, geom.x2_max),
                       (geom.x1_max, geom.x2_min), (geom.x1_max, geom.x2_max)]
            return max(float(self(np.array(a), np.array(bb))) for a, bb in corners)
        if self.kind == "ramp":
            corners = [(geom.x1_min, geom.x2_min), (geom.x1_min, geom.x2_max),
                       (geom.x1_max, geom.x2_min), (geom.x1_max, geom.x2_max)]
            return max(float(self(np.array(a), np.array(bb))) for a, bb in corners)
        if self.kind == "tabulated":
            return float(np.max(self.values))
        raise ValueError(self.kind)

    def maximizer(self, geom: DomainGeometry) -> tuple[float, float] | None:
        if self.kind == "gaussian" and self.amplitude > 0:
            return self.center
        return None


# ---------------------------------------------------------------------------
# boundary profile q
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryProfile:
    """Background profile q > 0.  Ring kinds are functions of (r, z); lake
    kinds live on the plane.  ``numeric`` wraps nodal values produced by
    ``operator.solve_weighted_harmonic``."""

    kind: str
    W: float = 0.0
    kappa: float = 0.0
    k: float = 0.0
    func: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    values: np.ndarray | None = field(default=None, compare=False)

    @staticmethod
    def ring_uniform(W: float, k: float, kappa: float = 0.0) -> "BoundaryProfile":
        """q = W r^2/2 + k: uniform far-field flow of speed W."""
        return BoundaryProfile(kind="ring_uniform", W=W, k=k, kappa=kappa)

    @staticmethod
    def ring_outside_ball(W: float, k: float, kappa: float = 0.0) -> "BoundaryProfile":
        """q = (W/2)(r^2 - r/(r^2+z^2)) + k: uniform flow past the unit ball."""
        return BoundaryProfile(kind="ring_outside_ball", W=W, k=k, kappa=kappa)

    @staticmethod
    def lake_constant(value: float, kappa: float = 0.0) -> "BoundaryProfile":
        return BoundaryProfile(kind="lake_constant", k=value, kappa=kappa)

    @staticmethod
    def lake_background(psi0: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "BoundaryProfile":
        """q = -psi0 for a strictly negative background stream function."""
        return BoundaryProfile(kind="lake_background", func=psi0)

    @staticmethod
    def numeric(values: np.ndarray) -> "BoundaryProfile":
        v = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("numeric profile has non-finite entries")
        return BoundaryProfile(kind="numeric", values=v)

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self.kind == "ring_uniform":
            return 0.5 * self.W * x1**2 + self.k
        if self.kind == "ring_outside_ball":
            rho2 = x1**2 + x2**2
            frac = np.where(rho2 > 0, x1 / np.where(rho2 > 0, rho2, 1.0), 0.0)
            return 0.5 * self.W * (x1**2 - frac) + self.k
        if self.kind == "lake_constant":
            return np.full(np.broadcast(x1, x2).shape, self.k)
        if self.kind == "lake_background":
            return -np.asarray(self.func(x1, x2), dtype=float)
        if self.kind == "numeric":
            raise ValueError("numeric profile is only defined at its own grid nodes")
        raise ValueError(f"unknown profile kind {self.kind!r}")

    @property
    def analytic(self) -> bool:
        return self.kind != "numeric"


def far_field_profile(W: float, alpha: float, k: float) -> Callable:
    """q_inf(x) = W x1^(alpha+1)/(alpha+1) + k, the translation-invariant
    weighted-harmonic background matched at the truncation boundary."""

    def q_inf(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        return W * x1 ** (alpha + 1) / (alpha + 1) + k

    return q_inf


# ---------------------------------------------------------------------------
# problem spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemSpec:
    """One instance of the truncated problem: geometry + b + q + (eps, p)."""

    geometry: DomainGeometry
    weight: WeightProfile
    profile: BoundaryProfile
    epsilon: float
    p: float
    scenario: str = "lake"  # "ring" | "lake"
    predicted_point: tuple[float, float] | None = None
    r_star: float | None = None

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must be in (0,1), got {self.epsilon}")
        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.weight.kind == "power" and self.weight.alpha > 0 and self.geometry.x1_min < 0:
            raise ValueError("power weight with alpha > 0 needs x1_min >= 0")

    @property
    def log_inv_eps(self) -> float:
        return math.log(1.0 / self.epsilon)

    @property
    def kappa_target(self) -> float:
        return self.profile.kappa

    def with_epsilon(self, epsilon: float) -> "ProblemSpec":
        return replace(self, epsilon=epsilon)


def _default_ring_rect(r_star: float, factor: float = 6.0) -> DomainGeometry:
    half = factor * r_star
    return DomainGeometry(0.0, half, -half, half, axis=True, truncated=True)


def make_whole_space_ring(W: float, kappa: float, rect: DomainGeometry | None = None,
                          epsilon: float = 0.1, p: float = 2.0) -> ProblemSpec:
    """Vortex ring in free space moving at speed W log(1/eps) with target
    circulation kappa; concentrates at radius r_star = kappa/(4 pi W)."""
    if W <= 0 or kappa <= 0:
        raise ValueError("W and kappa must be positive")
    r_star = kappa / (4.0 * math.pi * W)
    geom = rect if rect is not None else _default_ring_rect(r_star)
    if not geom.axis:
        raise ValueError("whole-space ring needs the axis flag on the rectangle")
    k = (3.0 / (8.0 * W)) * (kappa / TWO_PI) ** 2
    return ProblemSpec(
        geometry=geom,
        weight=WeightProfile.power(1.0),
        profile=BoundaryProfile.ring_uniform(W, k, kappa=kappa),
        epsilon=epsilon, p=p, scenario="ring",
        predicted_point=(r_star, 0.0), r_star=r_star)


def make_cylinder_ring(W: float, kappa: float, z_half: float | None = None,
                       epsilon: float = 0.1, p: float = 2.0) -> ProblemSpec:
    """Vortex ring inside the unit cylinder.  For kappa < 4 pi W the free
    space profile applies; otherwise the ring pushes against the wall and
    r_star = 1."""
    if W <= 0 or kappa <= 0:
        raise ValueError("W and kappa must be positive")
    if kappa < 4.0 * math.pi * W:
        r_star = kappa / (4.0 * math.pi * W)
        k = (3.0 / (8.0 * W)) * (kappa / TWO_PI) ** 2
    else:
        r_star = 1.0
        k = kappa / TWO_PI - 0.5 * W
    if z_half is None:
        z_half = max(3.0, 6.0 * r_star)
    geom = DomainGeometry(0.0, 1.0, -z_half, z_half, axis=True, truncated=True)
    return ProblemSpec(
        geometry=geom,
        weight=WeightProfile.power(1.0),
        profile=BoundaryProfile.ring_uniform(W, k, kappa=kappa),
        epsilon=epsilon, p=p, scenario="ring",
        predicted_point=(r_star, 0.0), r_star=r_star)


def outside_ball_radius(W: float, kappa: float) -> float:
    """Concentration radius for the exterior scenario with kappa > 6 pi W:
    the root of 2 r + 1/r^2 = kappa/(2 pi W) on [1, inf)."""
    target = kappa / (TWO_PI * W)
    if target < 3.0:
        raise ValueError("root only exists for kappa/(2 pi W) >= 3")
    lo, hi = 1.0, 0.5 * target + 1.0
    try:
        return brentq(lambda r: 2.0 * r + 1.0 / r**2 - target, lo, hi, xtol=1e-14, rtol=8.9e-16)
    except ValueError as exc:  # pragma: no cover - bracket is valid by construction
        raise ValueError(f"root finding failed on bracket [{lo}, {hi}]: {exc}") from exc


def make_outside_ball_ring(W: float, kappa: float, rect: DomainGeometry | None = None,
                           epsilon: float = 0.1, p: float = 2.0) -> ProblemSpec:
    """Vortex ring in the exterior of the unit ball.  For kappa <= 6 pi W the
    core concentrates on the equator of the ball (r_star = 1); beyond that it
    detaches to the root of 2 r + 1/r^2 = kappa/(2 pi W)."""
    if W <= 0 or kappa <= 0:
        raise ValueError("W and kappa must be positive")
    if kappa > 6.0 * math.pi * W:
        r_star = outside_ball_radius(W, kappa)
        k = 1.5 * W * (r_star**2 + 1.0 / r_star)
    else:
        r_star = 1.0
        k = kappa / TWO_PI
    geom = rect if rect is not None else DomainGeometry(
        0.0, 6.0 * max(r_star, 1.0), -6.0 * max(r_star, 1.0), 6.0 * max(r_star, 1.0),
        axis=True, obstacle=Disc((0.0, 0.0), 1.0), truncated=True)
    if geom.obstacle is None:
        raise ValueError("exterior scenario needs the unit-disc obstacle")
    return ProblemSpec(
        geometry=geom,
        weight=WeightProfile.power(1.0),
        profile=BoundaryProfile.ring_outside_ball(W, k, kappa=kappa),
        epsilon=epsilon, p=p, scenario="ring",
        predicted_point=(r_star, 0.0), r_star=r_star)


def invariant_companion(spec: ProblemSpec) -> ProblemSpec:
    """Translation-invariant comparison problem for an exterior spec: same
    rectangle without the obstacle, q replaced by the uniform-flow profile
    with the same additive constant.  Its energy level dominates the exterior
    one; the positive gap is the comparison diagnostic."""
    if spec.profile.kind != "ring_outside_ball":
        raise ValueError("companion is defined for exterior-ball specs")
    W, k = spec.profile.W, spec.profile.k
    geom = replace(spec.geometry, obstacle=None)
    if spec.kappa_target > 6.0 * math.pi * W:
        r_star = outside_ball_radius(W, spec.kappa_target)
        r_inf = math.sqrt(r_star**2 + 1.0 / r_star)
    else:
        # q_inf = W r^2/2 + k minimizes q^2/r at r with W r^2/2 = k/... scan handled by grid
        r_inf = math.sqrt(2.0 * k / (3.0 * W))
    return ProblemSpec(
        geometry=geom,
        weight=spec.weight,
        profile=BoundaryProfile.ring_uniform(W, k, kappa=spec.kappa_target),
        epsilon=spec.epsilon, p=spec.p, scenario="ring",
        predicted_point=(r_inf, 0.0), r_star=r_inf)


def make_lake(depth: WeightProfile, kappa: float | None = None,
              psi0: Callable | None = None,
              rect: DomainGeometry | None = None,
              epsilon: float = 0.1, p: float = 2.0) -> ProblemSpec:
    """Lake vortex with depth b.  Constant mode (kappa given) prescribes
    q = (kappa/(2 pi)) sup b and concentrates at the deepest point;
    background mode (psi0 given, sup psi0 < 0) prescribes q = -psi0 and
    concentrates at the maximizer of b/q^2."""
    if (kappa is None) == (psi0 is None):
        raise ValueError("exactly one of kappa, psi0 must be given")
    geom = rect if rect is not None else DomainGeometry(0.0, 2.0, 0.0, 2.0)
    if kappa is not None:
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        sup_b = depth.supremum(geom)
        profile = BoundaryProfile.lake_constant(kappa / TWO_PI * sup_b, kappa=kappa)
        predicted = depth.maximizer(geom)
    else:
        profile = BoundaryProfile.lake_background(psi0)
        predicted = None
    return ProblemSpec(
        geometry=geom, weight=depth, profile=profile,
        epsilon=epsilon, p=p, scenario="lake",
        predicted_point=predicted, r_star=None)


@dataclass(frozen=True)
class PredictedTarget:
    """Concentration prediction from the sampled profiles: the grid argmin
    of q^2/b, the limiting circulation 2 pi q/b there, and inf q^2/b (the
    limiting energy density divided by pi log(1/eps))."""

    point: tuple[float, float]
    node: tuple[int, int]
    limit_circulation: float
    limit_energy_density: float


def predicted_target(disc) -> PredictedTarget:
    """Scan q^2/b over interior grid nodes (obstacle and Dirichlet rim
    excluded); ties break to the lowest lexicographic node index."""
    grid, q, b = disc.grid, disc.q_nodes, disc.b_nodes
    ratio = np.where(grid.interior, q * q / np.where(grid.interior, b, 1.0), np.inf)
    k = int(np.argmin(ratio))         # first minimum in C-order = lexicographic
    i, j = divmod(k, grid.n2)
    return PredictedTarget(
        point=(float(grid.x1[i]), float(grid.x2[j])),
        node=(i, j),
        limit_circulation=float(TWO_PI * q[i, j] / b[i, j]),
        limit_energy_density=float(ratio[i, j]))
