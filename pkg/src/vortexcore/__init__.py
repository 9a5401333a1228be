"""Least-energy vortex cores for axisymmetric Euler flow and shallow lakes.

Computes ground states of the truncated weighted problem
-div(grad(u)/b) = (b/eps^2)(u - log(1/eps) q)_+^p, reconstructs the
associated steady flows, and verifies the concentration, circulation and
energy-scaling trends across eps sweeps.
"""

from .model import (DomainGeometry, Disc, MaskObstacle, WeightProfile,
                    BoundaryProfile, ProblemSpec, PredictedTarget,
                    make_whole_space_ring, make_cylinder_ring,
                    make_outside_ball_ring, make_lake, invariant_companion,
                    outside_ball_radius, predicted_target, far_field_profile)
from .grid import Grid, make_grid, integrate, dirichlet_energy, sample_profile, export_field_csv
from .operator import (SparseOperator, LinearSolveReport, LinearSolveFailure,
                       assemble, cg_solve, solve_weighted_harmonic, dump_matrix_market)
from .energy import (Discretization, EnergyBreakdown, NoNehariRoot, discretize,
                     energy, gradient, nehari_h, nehari_project,
                     energy_lower_bound_residual, change_weight_residual,
                     integral_identities, IdentityResiduals, hardy_check)
from .solver import (SolverOptions, SolveResult, CollapsedToZero, SolveFailed,
                     initial_guess, choose_tau, minimize, continuation, pick_center)
from .diagnostics import (CoreStats, EmptyCore, ReportRow, TrendFit, FlowFields,
                          StrictGap, extract_core, circulation, energy_report,
                          diameter_scaling, reconstruct_euler_flow,
                          reconstruct_lake_flow, mass_flux_divergence,
                          loop_circulation, strict_inequality_check)

__version__ = "0.1.0"
