"""Batch entry point: run sweeps, verify invariants, re-derive reports.

Subcommands:
  run <config.json>     continuation sweep; writes per-epsilon field CSVs,
                        solver traces (JSON lines) and the report (JSON +
                        flat CSV).  Exit 0 all converged, 1 config error,
                        2 any solve failure.
  check <config.json>   gradient / lower-bound / ray-constraint / Hardy /
                        integral-identity suites on a fresh small solve;
                        prints one pass/fail line per suite, exit 0 iff all
                        pass.
  report <dir>          recompute trend fits from a stored sweep and print
                        the limit-comparison table.

Every floating-point value is serialized with 17 significant digits so a
round trip through disk is bit-faithful, and all randomness comes from one
seeded generator: rerunning a config reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import model
from .energy import (Discretization, discretize, energy, gradient,
                     energy_lower_bound_residual, hardy_check,
                     integral_identities, nehari_h, nehari_project)
from .grid import make_grid
from .model import (DomainGeometry, ProblemSpec, WeightProfile,
                    predicted_target)
from .solver import SolveFailed, SolverOptions, continuation


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    scenario: str
    spec: ProblemSpec
    epsilons: tuple[float, ...]
    n1: int
    n2: int
    solver: SolverOptions
    out_dir: str
    seed: int
    checks: tuple[str, ...]
    raw: dict = field(compare=False, default_factory=dict)


def _depth_from_config(d: dict) -> WeightProfile:
    kind = d.get("kind")
    if kind == "constant":
        return WeightProfile.constant(float(d["value"]))
    if kind == "gaussian":
        return WeightProfile.gaussian_bump(
            center=tuple(d["center"]), amplitude=float(d["amplitude"]),
            width=float(d["width"]), base=float(d.get("base", 1.0)))
    if kind == "ramp":
        return WeightProfile.ramp(float(d["base"]), tuple(d["slope"]))
    if kind == "power":
        return WeightProfile.power(float(d["alpha"]))
    raise ConfigError(f"depth: unknown kind {kind!r}")


def _psi0_from_config(d: dict):
    kind = d.get("kind")
    if kind == "constant":
        v = float(d["value"])
        if v >= 0:
            raise ConfigError("psi0: background stream function must be negative")
        return lambda x1, x2: np.full(np.broadcast(np.asarray(x1), np.asarray(x2)).shape, v)
    if kind == "ramp":
        base = float(d["base"])
        s1, s2 = (float(s) for s in d["slope"])
        return lambda x1, x2: base + s1 * np.asarray(x1) + s2 * np.asarray(x2)
    raise ConfigError(f"psi0: unknown kind {kind!r}")


def _rect_from_config(vals, axis=False, obstacle=None, truncated=False) -> DomainGeometry:
    if len(vals) != 4:
        raise ConfigError("rect: expected [x1_min, x1_max, x2_min, x2_max]")
    return DomainGeometry(*(float(v) for v in vals), axis=axis,
                          obstacle=obstacle, truncated=truncated)


def parse_config(cfg: dict, out_dir_override: str | None = None,
                 seed_override: int | None = None) -> RunConfig:
    if not isinstance(cfg, dict):
        raise ConfigError("config: top-level JSON document must be an object")
    scenario = cfg.get("scenario")
    if scenario is None:
        raise ConfigError("scenario: missing")

    eps = cfg.get("epsilons")
    if not isinstance(eps, list) or not eps:
        raise ConfigError("epsilons: must be a nonempty list")
    eps = [float(e) for e in eps]
    if any(not (0.0 < e < 1.0) for e in eps):
        raise ConfigError("epsilons: all values must lie in (0,1)")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("epsilons: must be strictly decreasing")

    res = cfg.get("resolution", 64)
    if isinstance(res, (int, float)):
        n1 = n2 = int(res)
    else:
        if len(res) != 2:
            raise ConfigError("resolution: expected an int or [n1, n2]")
        n1, n2 = int(res[0]), int(res[1])
    if n1 < 8 or n2 < 8:
        raise ConfigError("resolution: must be at least 8 nodes per axis")

    p = float(cfg.get("p", 2.0))
    eps0 = eps[0]
    try:
        if scenario == "lake":
            depth = _depth_from_config(cfg.get("depth", {"kind": "constant", "value": 1.0}))
            rect = _rect_from_config(cfg["rect"]) if "rect" in cfg else None
            spec = model.make_lake(depth, kappa=float(cfg["kappa"]), rect=rect,
                                   epsilon=eps0, p=p)
        elif scenario == "lake_background":
            depth = _depth_from_config(cfg.get("depth", {"kind": "constant", "value": 1.0}))
            rect = _rect_from_config(cfg["rect"]) if "rect" in cfg else None
            spec = model.make_lake(depth, psi0=_psi0_from_config(cfg["psi0"]),
                                   rect=rect, epsilon=eps0, p=p)
        elif scenario == "whole_space_ring":
            rect = (_rect_from_config(cfg["rect"], axis=True, truncated=True)
                    if "rect" in cfg else None)
            spec = model.make_whole_space_ring(float(cfg["W"]), float(cfg["kappa"]),
                                               rect=rect, epsilon=eps0, p=p)
        elif scenario == "cylinder_ring":
            spec = model.make_cylinder_ring(float(cfg["W"]), float(cfg["kappa"]),
                                            z_half=cfg.get("z_half"), epsilon=eps0, p=p)
        elif scenario == "outside_ball_ring":
            rect = (_rect_from_config(cfg["rect"], axis=True,
                                      obstacle=model.Disc((0.0, 0.0), 1.0), truncated=True)
                    if "rect" in cfg else None)
            spec = model.make_outside_ball_ring(float(cfg["W"]), float(cfg["kappa"]),
                                                rect=rect, epsilon=eps0, p=p)
        else:
            raise ConfigError(f"scenario: unknown name {scenario!r}")
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{exc.args[0]}: missing") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario parameters invalid: {exc}") from exc

    sol = cfg.get("solver", {})
    try:
        solver = SolverOptions(
            grad_tol=float(sol.get("grad_tol", 1e-8)),
            max_iter=int(sol.get("max_iter", 500)),
            shrink=float(sol.get("shrink", 0.5)),
            reproject_every=int(sol.get("reproject_every", 1)),
            warm_start=bool(sol.get("warm_start", True)))
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc

    out_dir = out_dir_override or cfg.get("out_dir", "out")
    seed = int(seed_override if seed_override is not None else cfg.get("seed", 0))
    checks = tuple(cfg.get("checks", ("gradient", "lower_bound", "nehari",
                                      "hardy", "identities")))
    return RunConfig(scenario=scenario, spec=spec, epsilons=tuple(eps),
                     n1=n1, n2=n2, solver=solver, out_dir=out_dir, seed=seed,
                     checks=checks, raw=dict(cfg))


def load_config(path, out_dir_override=None, seed_override=None) -> RunConfig:
    with open(path) as fh:
        cfg = json.load(fh)
    return parse_config(cfg, out_dir_override, seed_override)


# ---------------------------------------------------------------------------
# deterministic serialization: 17 significant digits everywhere
# ---------------------------------------------------------------------------

def format_float(x: float) -> str:
    if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
        return '"%s"' % repr(x)
    return format(float(x), ".17g")


def json17(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  {json.dumps(str(k))}: {json17(v, indent + 1)}' for k, v in obj.items())
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            return "[]"
        items = ",\n".join(f"{pad}  {json17(v, indent + 1)}" for v in obj)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _row_to_dict(row: diag.ReportRow) -> dict:
    d = asdict(row)
    d["peak"] = list(row.peak)
    d["centroid"] = list(row.centroid)
    return d


def _field_csv_text(disc: Discretization, u: np.ndarray) -> str:
    flow = (diag.reconstruct_euler_flow(disc, u) if disc.spec.scenario == "ring"
            else diag.reconstruct_lake_flow(disc, u))
    grid = disc.grid
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["x1", "x2", "u", "psi", "vorticity"])
    for i in range(grid.n1):
        for j in range(grid.n2):
            writer.writerow([
                format(grid.x1[i], ".17g"), format(grid.x2[j], ".17g"),
                format(u[i, j] if grid.interior[i, j] else 0.0, ".17g"),
                format(flow.psi[i, j], ".17g"),
                format(flow.vorticity[i, j], ".17g")])
    return buf.getvalue()


def _report_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    scalar_keys = [k for k in rows[0] if not isinstance(rows[0][k], list)]
    writer.writerow(scalar_keys)
    for r in rows:
        writer.writerow([format(r[k], ".17g") if isinstance(r[k], float) else r[k]
                         for k in scalar_keys])
    return buf.getvalue()


def run(config: RunConfig, quiet: bool = False) -> int:
    out = Path(config.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return 1

    failure = None
    try:
        results, disc_last = continuation(config.spec, config.epsilons,
                                          config.n1, config.n2, config.solver)
    except SolveFailed as exc:
        failure = str(exc)
        results = exc.results
        if not results:
            print(f"error: {failure}", file=sys.stderr)
            return 2
        disc_last = None

    # rebuild the shared discretization ladder for reporting
    disc0 = discretize(config.spec.with_epsilon(config.epsilons[0]), config.n1, config.n2)
    predicted = predicted_target(disc0)
    rows = []
    row_dicts = []
    staged: list[tuple[str, str]] = []
    for idx, res in enumerate(results):
        disc = disc0.with_epsilon(res.epsilon)
        row = diag.energy_report(disc, res, predicted)
        rows.append(row)
        row_dicts.append(_row_to_dict(row))
        staged.append((f"fields_{idx:03d}.csv", _field_csv_text(disc, res.u)))
        trace_lines = "".join(
            "{" + f'"iteration": {it}, "energy": {format_float(E)}, '
                  f'"grad_norm": {format_float(gn)}' + "}\n"
            for it, E, gn in res.trace)
        staged.append((f"trace_{idx:03d}.jsonl", trace_lines))

    trends: dict = {"points": len(rows)}
    if len(rows) >= 3 and all(r.diameter > 0 for r in rows):
        fit = diag.diameter_scaling(rows)
        trends.update(diameter_slope=fit.diameter_slope,
                      diam_over_eps_min=fit.diam_over_eps_min,
                      diam_over_eps_max=fit.diam_over_eps_max)
    else:
        trends["diameter_slope"] = "insufficient points"

    report_obj = {
        "config": config.raw,
        "predicted": {
            "point": list(predicted.point),
            "limit_circulation": predicted.limit_circulation,
            "inf_q2_over_b": predicted.limit_energy_density,
        },
        "rows": row_dicts,
        "trends": trends,
        "all_converged": all(r.converged for r in results) and failure is None,
    }
    staged.append(("report.json", json17(report_obj) + "\n"))
    if row_dicts:
        staged.append(("report.csv", _report_csv_text(row_dicts)))

    try:
        for name, text in staged:
            _atomic_write(out / name, text)
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return 1

    if not quiet:
        _print_limit_table(row_dicts, report_obj["predicted"], trends)
    if failure is not None:
        print(f"error: {failure}", file=sys.stderr)
        return 2
    return 0


def _print_limit_table(rows, predicted, trends) -> None:
    print(f"{'eps':>8} {'energy':>12} {'kappa*b/q':>12} {'E/(pi log)':>12} "
          f"{'ratio':>8} {'diam/eps':>9} {'comp':>5}")
    for r in rows:
        print(f"{r['epsilon']:8.4g} {r['energy']:12.6g} {r['kappa_normalized']:12.6g} "
              f"{r['energy_over_pilog']:12.6g} {r['upper_bound_ratio']:8.4g} "
              f"{r['diam_over_eps']:9.4g} {r['components']:5d}")
    print(f"targets: kappa*b/q -> {2*math.pi:.6g}, E/(pi log) -> "
          f"{predicted['inf_q2_over_b']:.6g}, diameter slope -> 1")
    slope = trends.get("diameter_slope")
    if isinstance(slope, str):
        print(f"diameter slope: {slope}")
    else:
        print(f"diameter slope: {slope:.4g}  (diam/eps in "
              f"[{trends['diam_over_eps_min']:.4g}, {trends['diam_over_eps_max']:.4g}])")


# ---------------------------------------------------------------------------
# property suites (shared with the acceptance tests)
# ---------------------------------------------------------------------------

def standard_check_disc(n: int = 16, epsilon: float = 0.5, p: float = 2.0) -> Discretization:
    """The reference instance for the cheap suites: b = 1, q = 1 on a unit
    square."""
    spec = model.make_lake(WeightProfile.constant(1.0), kappa=2.0 * math.pi,
                           rect=DomainGeometry(0.0, 1.0, 0.0, 1.0),
                           epsilon=epsilon, p=p)
    return discretize(spec, n, n)


def random_interior_field(disc: Discretization, rng: np.random.Generator,
                          lo: float = 0.0, hi: float = 2.0) -> np.ndarray:
    u = disc.grid.zero_field()
    u[disc.grid.interior] = rng.uniform(lo, hi, disc.grid.n_interior)
    return u


def random_bump_field(grid, rng: np.random.Generator, n_bumps: int = 2,
                      x1_margin: float = 0.0, amplitude: float = 1.0) -> np.ndarray:
    """Sum of compactly supported C1 bumps (biweight profile), vanishing on
    the boundary and at least ``x1_margin`` away from the left edge."""
    g = grid.geometry
    u = np.zeros(grid.shape)
    X1 = np.broadcast_to(grid.x1[:, None], grid.shape)
    X2 = np.broadcast_to(grid.x2[None, :], grid.shape)
    L1 = g.x1_max - g.x1_min - x1_margin
    L2 = g.x2_max - g.x2_min
    for _ in range(n_bumps):
        w = rng.uniform(0.1, 0.25) * min(L1, L2)
        c1 = rng.uniform(g.x1_min + x1_margin + w, g.x1_max - w)
        c2 = rng.uniform(g.x2_min + w, g.x2_max - w)
        a = amplitude * rng.uniform(0.5, 2.0)
        d2 = ((X1 - c1) ** 2 + (X2 - c2) ** 2) / w**2
        u += a * np.maximum(0.0, 1.0 - d2) ** 2
    return np.where(grid.interior, u, 0.0)


def suite_gradient(disc: Discretization, rng: np.random.Generator,
                   n_pairs: int = 20, t: float = 1e-5,
                   corrupt: bool = False) -> tuple[bool, float]:
    """Central differences of the energy against the analytic pairing."""
    worst = 0.0
    for _ in range(n_pairs):
        u = random_interior_field(disc, rng, 0.0, 2.0)
        v = random_interior_field(disc, rng, -1.0, 1.0)
        g = gradient(disc, u)
        if corrupt:
            g = g + 1e-3 * np.where(disc.grid.interior, 1.0, 0.0)
        analytic = float(np.sum(g * v))
        fd = (energy(disc, u + t * v).total - energy(disc, u - t * v).total) / (2.0 * t)
        scale = max(abs(analytic), abs(fd), 1e-300)
        worst = max(worst, abs(fd - analytic) / scale)
    return worst <= 1e-6, worst


def suite_lower_bound(rng: np.random.Generator, n_fields: int = 1000,
                      ps=(1.5, 2.0, 3.0), n: int = 16) -> tuple[bool, float]:
    """Residual of the exact discrete energy inequality over random fields."""
    worst = math.inf
    for p in ps:
        disc = standard_check_disc(n=n, p=p)
        for _ in range(n_fields // len(ps) + 1):
            u = random_interior_field(disc, rng, -1.0, 3.0)
            res = energy_lower_bound_residual(disc, u)
            scale = max(1.0, abs(energy(disc, u).total))
            worst = min(worst, res / scale)
    return worst >= -1e-12, worst


def suite_nehari(disc: Discretization, rng: np.random.Generator,
                 n_fields: int = 200) -> tuple[bool, float]:
    """Projection lands on the constraint set and is a ray maximum."""
    worst = 0.0
    for _ in range(n_fields):
        u = random_interior_field(disc, rng, 0.0, 2.0)
        t_star, proj = nehari_project(disc, u)
        norm2 = disc.A.quadratic_form(disc.pack(proj))
        res = abs(nehari_h(disc, proj, 1.0)) / norm2
        worst = max(worst, res)
        E_star = energy(disc, proj).total
        for t in (0.5, 0.9, 1.1, 2.0):
            if energy(disc, t * proj).total > E_star + 1e-12 * max(1.0, abs(E_star)):
                return False, math.inf
    return worst <= 1e-10, worst


def suite_hardy(rng: np.random.Generator, n_fields: int = 100,
                alphas=(0.0, 1.0)) -> tuple[bool, float]:
    """Weighted Hardy inequality on random off-axis bumps."""
    geom = DomainGeometry(0.0, 3.0, -1.5, 1.5, axis=True)
    grid = make_grid(geom, 64, 64)
    worst = 0.0
    for alpha in alphas:
        for _ in range(n_fields // len(alphas)):
            u = random_bump_field(grid, rng, n_bumps=2, x1_margin=0.4)
            lhs, rhs, ok = hardy_check(grid, alpha, u)
            if rhs > 0:
                worst = max(worst, lhs / rhs)
            if not ok:
                return False, worst
    return True, worst


def suite_identities(rng: np.random.Generator, n: int = 32,
                     epsilons=(0.2, 0.1), tol: float = 1e-10,
                     solution_bound: float = 1e-4,
                     power_bound: float = 1e-1) -> tuple[bool, float, float]:
    """Core integral identities: tight at converged solutions, O(1) on
    random non-solutions (the test has power)."""
    spec = model.make_lake(WeightProfile.constant(1.0), kappa=2.0 * math.pi,
                           epsilon=epsilons[0], p=2.0)
    opts = SolverOptions(grad_tol=tol)
    results, disc = continuation(spec, list(epsilons), n, n, opts)
    worst_sol = 0.0
    for res in results:
        d = disc.with_epsilon(res.epsilon)
        ir = integral_identities(d, res.u)
        worst_sol = max(worst_sol, ir.res_a, ir.res_b)
    worst_neg = math.inf
    d = disc.with_epsilon(epsilons[-1])
    for _ in range(5):
        u = random_bump_field(disc.grid, rng, n_bumps=2) * 3.0 * float(np.max(d.q_eps))
        ir = integral_identities(d, u)
        if not ir.empty_core:
            worst_neg = min(worst_neg, max(ir.res_a, ir.res_b))
    ok = worst_sol <= solution_bound and worst_neg >= power_bound
    return ok, worst_sol, worst_neg


def check(config: RunConfig, quiet: bool = False,
          corrupt_gradient: bool = False) -> int:
    """Run the invariant suites; one line per suite, exit 0 iff all pass."""
    rng = np.random.default_rng(config.seed)
    disc = standard_check_disc()
    outcomes = []

    if "gradient" in config.checks:
        ok, worst = suite_gradient(disc, rng, corrupt=corrupt_gradient)
        outcomes.append(("gradient consistency", ok, f"max rel err {worst:.3e}"))
    if "lower_bound" in config.checks:
        ok, worst = suite_lower_bound(rng)
        outcomes.append(("energy lower bound", ok, f"min residual {worst:.3e}"))
    if "nehari" in config.checks:
        ok, worst = suite_nehari(disc, rng)
        outcomes.append(("ray constraint", ok, f"max |h(1)| rel {worst:.3e}"))
    if "hardy" in config.checks:
        ok, worst = suite_hardy(rng)
        outcomes.append(("hardy inequality", ok, f"max lhs/rhs {worst:.3f}"))
    if "identities" in config.checks:
        ok, ws, wn = suite_identities(rng)
        outcomes.append(("integral identities", ok,
                         f"solution res {ws:.3e}, non-solution res {wn:.3e}"))

    all_ok = all(ok for _, ok, _ in outcomes)
    if not quiet:
        width = max(len(name) for name, _, _ in outcomes) if outcomes else 0
        for name, ok, detail in outcomes:
            print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
        print("all checks passed" if all_ok else "some checks FAILED")
    return 0 if all_ok else 1


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def report(directory, quiet: bool = False) -> int:
    path = Path(directory) / "report.json"
    if not path.exists():
        print(f"error: no report.json in {directory}", file=sys.stderr)
        return 1
    try:
        with open(path) as fh:
            obj = json.load(fh)
        rows = obj["rows"]
        predicted = obj["predicted"]
    except (json.JSONDecodeError, KeyError) as exc:
        print(f"error: corrupt report: {exc}", file=sys.stderr)
        return 1

    trends: dict = {"points": len(rows)}
    if len(rows) >= 3 and all(r["diameter"] > 0 for r in rows):
        eps = np.array([r["epsilon"] for r in rows])
        diam = np.array([r["diameter"] for r in rows])
        trends["diameter_slope"] = float(np.polyfit(np.log(eps), np.log(diam), 1)[0])
        trends["diam_over_eps_min"] = float(np.min(diam / eps))
        trends["diam_over_eps_max"] = float(np.max(diam / eps))
    else:
        trends["diameter_slope"] = "insufficient points"
    if not quiet:
        _print_limit_table(rows, predicted, trends)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vortexcore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a continuation sweep")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--quiet", action="store_true")

    p_check = sub.add_parser("check", help="run the invariant suites")
    p_check.add_argument("config")
    p_check.add_argument("--seed", type=int, default=None)
    p_check.add_argument("--quiet", action="store_true")

    p_report = sub.add_parser("report", help="recompute trends from a sweep directory")
    p_report.add_argument("directory")
    p_report.add_argument("--quiet", action="store_true")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, args.out, args.seed)
            return run(cfg, quiet=args.quiet)
        if args.command == "check":
            cfg = load_config(args.config, None, args.seed)
            return check(cfg, quiet=args.quiet)
        if args.command == "report":
            return report(args.directory, quiet=args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
