"""Command-line entry point and the pipelines behind each subcommand.

Each pipeline returns ``(exit_code, summary)``; :func:`main` prints the
summary as JSON on stdout.  Exit codes: 0 all enabled checks passed,
1 a check failed (including a refused solve), 2 configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    RunConfig,
    build_options,
    build_problem,
    canonical_text,
    config_digest,
    load_config,
    load_preset,
)
from .errors import A2ViolationError, ConfigurationError, SegsolveError
from .freeboundary import adjacency_graph, extract_interfaces, junction_analysis, locate_multiple_points
from .io import read_fields, read_json, render_partition, write_fields, write_json
from .minimizer import (
    Solution,
    h1_norm,
    multi_start,
    perturbation_study,
    solve,
)
from .problem import Problem, check_A2, rescale_to_unit_diffusion, validate_admissible
from .segregation import State, is_segregated
from .verifier import acf_product, compute_barriers, extremality_residuals, lipschitz_report

log = logging.getLogger("segsolve")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SUBCOMMANDS = ("solve", "verify", "analyze", "sweep")

FIELDS_FILE = "fields.csv"
MANIFEST_FILE = "manifest.json"


def thread_cap() -> int:
    """Worker cap for sweeps: ``SEGSOLVE_THREADS`` if set, else the CPU count."""
    raw = os.environ.get("SEGSOLVE_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ConfigurationError(f"SEGSOLVE_THREADS must be an integer, got {raw!r}") from None
        return max(1, n)
    return max(1, os.cpu_count() or 1)


# --------------------------------------------------------------------------
# solving with optional rescaling
# --------------------------------------------------------------------------


def _unit_frame(p: Problem, state: State | None = None):
    """Unit-diffusion problem (and mapped state) used by the checks."""
    if p.unit_diffusion:
        return p, state
    rp = rescale_to_unit_diffusion(p)
    if state is None:
        return rp.problem, None
    v = np.array(rp.forward(state.u))
    g = p.grid
    v[:, g.boundary] = rp.problem.boundary.values[:, g.boundary]
    return rp.problem, State(g, v)


def solve_config(cfg: RunConfig, p: Problem | None = None, seed: int | None = None) -> Solution:
    """Solve the configured problem; variable diffusions go through rescaling when enabled."""
    p = build_problem(cfg) if p is None else p
    opts = build_options(cfg, seed)
    if p.unit_diffusion or not cfg["solve"]["rescale"]:
        return solve(p, opts)
    rp = rescale_to_unit_diffusion(p)
    sol_v = solve(rp.problem, opts)
    u = np.array(rp.backward(sol_v.state.u))
    g = p.grid
    u[:, g.boundary] = p.boundary.values[:, g.boundary]
    # the trace records the rescaled functional
    return Solution(State(g, u), list(sol_v.energy_trace), sol_v.iters,
                    sol_v.converged, sol_v.final_gradient_norm, sol_v.method + "+rescaled")


# --------------------------------------------------------------------------
# pipelines
# --------------------------------------------------------------------------


def _a2_summary(p: Problem):
    out = []
    for i in range(p.k):
        rep = check_A2(p, i)
        out.append({"density": i + 1, "holds": rep.holds, "min_eigenvalue": rep.min_eigenvalue, "b": rep.bound})
    return out


def run_solve(cfg: RunConfig, out: Path, check_only: bool = False):
    t0 = time.perf_counter()
    p = build_problem(cfg)
    adm = validate_admissible(p.boundary)
    summary = {"command": "solve", "config_digest": config_digest(cfg), "version": __version__}
    if not adm.ok:
        summary["failures"] = [{"check": "admissible", "violations": adm.violations[:10]}]
        return EXIT_CHECK, summary
    if check_only:
        a2 = _a2_summary(p)
        summary["A2"] = a2
        holds = all(r["holds"] for r in a2)
        expect_fail = cfg["verify"]["expect_a2_failure"]
        summary["expect_a2_failure"] = expect_fail
        if holds == expect_fail:
            summary["failures"] = [{"check": "A2", "detail": "A2 outcome differs from expectation", "A2": a2}]
            return EXIT_CHECK, summary
        return EXIT_OK, summary
    try:
        sol = solve_config(cfg, p)
    except A2ViolationError as exc:
        summary["failures"] = [{"check": "A2", "density": exc.index + 1, "min_eigenvalue": exc.min_eigenvalue,
                                "detail": str(exc)}]
        return EXIT_CHECK, summary
    from .minimizer import energy

    out.mkdir(parents=True, exist_ok=True)
    if cfg["output"]["fields"]:
        write_fields(sol, out / FIELDS_FILE)
    (out / "config.toml").write_text(canonical_text(cfg))
    g = p.grid
    manifest = {
        "config_digest": config_digest(cfg),
        "version": __version__,
        "grid": [g.nx, g.ny],
        "h": g.h,
        "energy": energy(sol.state, p),
        "iterations": sol.iters,
        "converged": sol.converged,
        "method": sol.method,
        "final_gradient_norm": sol.final_gradient_norm,
        "wall_time": time.perf_counter() - t0,
    }
    write_json(manifest, out / MANIFEST_FILE)
    summary.update({k: manifest[k] for k in ("energy", "iterations", "converged", "grid")})
    if not sol.converged:
        summary["failures"] = [{"check": "convergence", "iterations": sol.iters}]
        return EXIT_CHECK, summary
    return EXIT_OK, summary


def _load_state(cfg: RunConfig, out: Path, p: Problem) -> State:
    path = out / FIELDS_FILE
    if not path.exists():
        raise ConfigurationError(f"no stored solution at {path}; run 'solve' first")
    return read_fields(path, p.grid)


def _acf_center(state: State, report):
    g = state.grid
    if report.multiple_points:
        return report.multiple_points[0].location
    if not report.interfaces:
        return None
    xmin, xmax, ymin, ymax = g.extent
    c = g.center if g.shape_kind == "disk" else (0.5 * (xmin + xmax), 0.5 * (ymin + ymax))
    pts = np.vstack([iface.points for iface in report.interfaces])
    best = pts[int(np.argmin(np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])))]
    return (float(best[0]), float(best[1]))


def _dyadic_radii(g, x0, top=32):
    radii = []
    m = 4
    while m <= top and g.contains_ball(x0, m * g.h):
        radii.append(m * g.h)
        m *= 2
    return radii


def run_verify(cfg: RunConfig, out: Path):
    t0 = time.perf_counter()
    p0 = build_problem(cfg)
    state0 = _load_state(cfg, out, p0)
    p, state = _unit_frame(p0, state0)
    v = cfg["verify"]
    results, failures = {}, []

    seg = is_segregated(state, 0.0)
    results["segregation"] = {"ok": seg.ok, "worst_value": seg.worst_value}
    if not seg.ok:
        failures.append({"check": "segregation", "node": seg.worst_node, "value": seg.worst_value})

    if v["extremality"]:
        rep = extremality_residuals(state, p, C=v["extremality_C"])
        results["extremality"] = {"sub": rep.sub, "hat": rep.hat, "tol": rep.tol, "ok": rep.ok,
                                  "noise_floor": rep.noise_floor}
        if not rep.ok:
            bad = int(np.argmax([max(a, b) for a, b in zip(rep.sub, rep.hat)]))
            failures.append({"check": "extremality", "density": bad + 1,
                             "sub": rep.sub[bad], "hat": rep.hat[bad],
                             "node": rep.sub_node[bad] if rep.sub[bad] >= rep.hat[bad] else rep.hat_node[bad],
                             "tol": rep.tol})
    if v["barriers"]:
        try:
            bp = compute_barriers(p, state)
            results["barriers"] = {"upper_violation": bp.upper_violation, "lower_violation": bp.lower_violation,
                                   "picard_iters": bp.picard_iters, "ok": bp.ok}
            if not bp.ok:
                failures.append({"check": "barriers", "violations": bp.violations[:10]})
        except A2ViolationError as exc:
            failures.append({"check": "A2", "density": exc.index + 1, "detail": str(exc)})
    report = None
    if v["acf"]:
        report = extract_interfaces(state)
        locate_multiple_points(report, state)
        x0 = _acf_center(state, report)
        radii = _dyadic_radii(p.grid, x0) if x0 is not None else []
        if len(radii) >= 2:
            tr = acf_product(state, x0, radii, eps_mono=v["acf_eps"])
            results["acf"] = {"center": tr.center, "radii": tr.radii, "values": tr.values,
                              "max_violation": tr.max_violation, "ok": tr.ok}
            if not tr.ok:
                failures.append({"check": "acf", "violations": tr.violations})
        else:
            results["acf"] = {"skipped": "no interface point with room for two radii"}
    if v["lipschitz"]:
        lr = lipschitz_report(state0, max(v["lipschitz_delta"], 2 * p.grid.h))
        results["lipschitz"] = {"L_max": lr.L_max, "per_density": lr.per_density, "delta": lr.delta}
    results["wall_time"] = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    write_json(results, out / "verify.json")
    man = out / MANIFEST_FILE
    if man.exists():
        m = read_json(man)
        m["verify"] = {k: val for k, val in results.items() if k != "wall_time"}
        write_json(m, man)
    summary = {"command": "verify", "results": results}
    if failures:
        summary["failures"] = failures
        return EXIT_CHECK, summary
    return EXIT_OK, summary


def _report_dict(report, junctions):
    return {
        "interfaces": [
            {"labels": [a + 1 for a in iface.labels], "points": iface.points, "length": iface.length}
            for iface in report.interfaces
        ],
        "zero_regions": [len(z) for z in report.zero_regions],
        "multiple_points": [
            {"location": mp.location, "multiplicity": mp.multiplicity, "labels": [a + 1 for a in mp.labels]}
            for mp in report.multiple_points
        ],
        "junctions": junctions,
        "adjacency": sorted([a + 1, b + 1] for a, b in adjacency_graph(report).edge_set()),
        "support_components": {str(i + 1): n for i, n in report.support_components.items()},
    }


def run_analyze(cfg: RunConfig, out: Path):
    p = build_problem(cfg)
    state = _load_state(cfg, out, p)
    report = extract_interfaces(state)
    mps = locate_multiple_points(report, state)
    v = cfg["verify"]
    junctions, failures = [], []
    for mp in mps:
        try:
            ja = junction_analysis(state, mp.location, mp.multiplicity)
        except SegsolveError as exc:
            junctions.append({"location": mp.location, "skipped": str(exc)})
            continue
        mp.sector_angles = ja.sector_angles
        mp.exponent, mp.theta0, mp.gradient_decay = ja.exponent, ja.theta0, ja.gradient_decay
        angles = {str(k + 1): float(np.degrees(a)) for k, a in ja.density_angles().items()}
        junctions.append({"location": mp.location, "multiplicity": mp.multiplicity, "angles_deg": angles,
                          "angle_sum": ja.angle_sum, "exponent": ja.exponent, "theta0": ja.theta0,
                          "gradient_decay": ja.gradient_decay, "decay_factors": ja.decay_factors})
        if v["junction"]:
            target = 360.0 / mp.multiplicity
            if any(abs(a - target) > v["junction_angle_tol_deg"] for a in angles.values()):
                failures.append({"check": "junction_angles", "angles_deg": angles})
            if abs(ja.exponent - 0.5 * mp.multiplicity) > v["junction_exponent_tol"]:
                failures.append({"check": "junction_exponent", "exponent": ja.exponent})
            if any(f < v["junction_decay_min"] for f in ja.decay_factors):
                failures.append({"check": "gradient_decay", "factors": ja.decay_factors})
    if v["junction"] and not mps:
        failures.append({"check": "multiple_points", "detail": "no multiple point detected"})
    out.mkdir(parents=True, exist_ok=True)
    data = _report_dict(report, junctions)
    write_json(data, out / "nodal_report.json")
    if cfg["output"]["image"]:
        render_partition(state, report, out / "partition.ppm")
    summary = {"command": "analyze", "interfaces": len(report.interfaces), "multiple_points": data["multiple_points"],
               "junctions": [{k: j[k] for k in j if k != "gradient_decay"} for j in junctions],
               "adjacency": data["adjacency"]}
    if failures:
        summary["failures"] = failures
        return EXIT_CHECK, summary
    return EXIT_OK, summary


def run_sweep(cfg: RunConfig, out: Path):
    sw = cfg["sweep"]
    workers = thread_cap()
    results, failures = {}, []
    if sw["grids"]:
        delta = cfg["verify"]["lipschitz_delta"]

        def one(n):
            c = cfg.with_overrides(grid=n)
            sol = solve_config(c)
            lr = lipschitz_report(sol, max(delta, 2 * sol.state.grid.h))
            return {"n": n, "h": sol.state.grid.h, "L_max": lr.L_max, "iterations": sol.iters}

        with ThreadPoolExecutor(max_workers=min(workers, len(sw["grids"]))) as ex:
            rows = list(ex.map(one, sw["grids"]))
        results["refinement"] = rows
        if len(rows) >= 2:
            a, b = rows[-2]["L_max"], rows[-1]["L_max"]
            rel = abs(a - b) / max(abs(b), 1e-300)
            results["refinement_rel_change"] = rel
            if rel > sw["lipschitz_rel_tol"]:
                failures.append({"check": "lipschitz_refinement", "rel_change": rel})
    if sw["eps"]:
        p = build_problem(cfg)
        if not p.unit_diffusion:
            raise ConfigurationError("sweep.eps needs unit diffusions")
        base, rows = perturbation_study(p, sw["eps"], build_options(cfg), workers=min(workers, len(sw["eps"])))
        norm = h1_norm(base.state)
        rows = sorted(rows, key=lambda r: -r.eps)
        results["perturbation"] = {"norm": norm, "rows": [{"eps": r.eps, "distance": r.distance, "ratio": r.ratio}
                                                          for r in rows]}
        dists = [r.distance for r in rows]
        if not all(d1 > d2 for d1, d2 in zip(dists, dists[1:])):
            failures.append({"check": "perturbation_monotone", "distances": dists})
        if dists[-1] > sw["perturbation_rel_tol"] * norm:
            failures.append({"check": "perturbation_size", "distance": dists[-1], "norm": norm})
    if sw["seeds"]:
        p = build_problem(cfg)
        rep = multi_start(p, sw["seeds"], build_options(cfg), workers=min(workers, sw["seeds"]))
        results["multistart"] = {"seeds": rep.seeds, "max_distance": rep.max_distance, "norm": rep.norm,
                                 "relative_distance": rep.relative_distance,
                                 "energy_spread": rep.energy_spread,
                                 "relative_energy_spread": rep.relative_energy_spread}
        if rep.relative_distance > sw["uniqueness_rel_tol"]:
            failures.append({"check": "uniqueness_distance", "relative_distance": rep.relative_distance})
        if rep.relative_energy_spread > sw["energy_spread_tol"]:
            failures.append({"check": "uniqueness_energy", "relative_energy_spread": rep.relative_energy_spread})
    out.mkdir(parents=True, exist_ok=True)
    write_json(results, out / "sweep.json")
    summary = {"command": "sweep", "results": results}
    if failures:
        summary["failures"] = failures
        return EXIT_CHECK, summary
    return EXIT_OK, summary


def run(subcommand: str, cfg: RunConfig, out, *, seed: int | None = None, grid: int | None = None,
        check_only: bool = False):
    """Run one subcommand; returns ``(exit_code, summary)``.  Errors map to exit codes."""
    out = Path(out)
    try:
        if subcommand not in SUBCOMMANDS:
            raise ConfigurationError(f"unknown subcommand {subcommand!r}")
        cfg = cfg.with_overrides(seed=seed, grid=grid)
        if subcommand == "solve":
            return run_solve(cfg, out, check_only)
        if subcommand == "verify":
            return run_verify(cfg, out)
        if subcommand == "analyze":
            return run_analyze(cfg, out)
        return run_sweep(cfg, out)
    except ConfigurationError as exc:
        return EXIT_CONFIG, {"command": subcommand, "error": "configuration", "detail": str(exc)}
    except A2ViolationError as exc:
        return EXIT_CHECK, {"command": subcommand, "failures": [{"check": "A2", "detail": str(exc)}]}
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        log.debug("runtime failure", exc_info=True)
        return EXIT_RUNTIME, {"command": subcommand, "error": "runtime", "detail": f"{type(exc).__name__}: {exc}"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="segsolve", description="Segregated-state minimizers on 2D grids.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (
        ("solve", "minimize the energy and store fields and a manifest"),
        ("verify", "run the verifier checks on a stored solution"),
        ("analyze", "extract interfaces, multiple points and a partition image"),
        ("sweep", "grid-refinement, boundary-perturbation and multi-start studies"),
    ):
        sp = sub.add_parser(name, help=text)
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="TOML run configuration")
        src.add_argument("--preset", help="name of a shipped preset configuration")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        sp.add_argument("--seed", type=int, default=None, help="override solve.seed")
        sp.add_argument("--grid", type=int, default=None, help="override domain.nx (ny follows)")
        sp.add_argument("--check-only", action="store_true",
                        help="validate the configuration and assumptions without solving")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_preset(args.preset) if args.preset else load_config(args.config)
    except ConfigurationError as exc:
        print(json.dumps({"command": args.command, "error": "configuration", "detail": str(exc)}))
        return EXIT_CONFIG
    if args.check_only and args.command != "solve":
        code, summary = EXIT_OK, {"command": args.command, "check_only": True, "config_digest": config_digest(cfg)}
    else:
        code, summary = run(args.command, cfg, args.out, seed=args.seed, grid=args.grid, check_only=args.check_only)
    from .io import _jsonable

    summary["exit_code"] = code
    if code == EXIT_OK:
        summary["status"] = "pass"
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
