"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Every run goes through the shipped presets and :func:`segsolve.cli.run`.
Tolerances are pinned below and are not tuned per run.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.linalg import spsolve

from segsolve.cli import EXIT_CHECK, EXIT_OK, run, solve_config
from segsolve.config import build_problem, load_preset
from segsolve.freeboundary import extract_interfaces
from segsolve.grid import build_grid, laplacian5
from segsolve.io import read_fields, read_json
from segsolve.minimizer import energy, energy_gradient, initial_state
from segsolve.problem import check_A2
from segsolve.segregation import State, hat, is_segregated, project_segregated
from segsolve.verifier import EXTREMALITY_C, acf_product, compute_barriers, extremality_residuals, hat_reaction

# criterion 1
HARMONIC_TOL = 5e-3
SOLVE_TIME_65 = 60.0
# criterion 2
RESIDUAL_RATIO = 0.6
# criterion 3
ACF_MONO_EPS = 1e-6
ACF_PAIR_REL = 0.10
ACF_PAIR_VALUE = (np.pi / 2) ** 2
# criterion 4
JUNCTION_DIST_H = 2.0
ANGLE_TOL_DEG = 5.0
EXPONENT = 1.5
EXPONENT_TOL = 0.1
DECAY_MIN = 1.3
JUNCTION_TIME = 600.0
# criterion 5
UNIQUE_REL = 1e-4
SPREAD_REL = 1e-8
N_STARTS = 10
# criterion 6
EPS_LIST = (1e-1, 1e-2, 1e-3)
PERTURB_REL = 1e-2
# criterion 7
BARRIER_TOL = 1e-6
BARRIER_ORACLE_TOL = 5e-3
# criterion 8
LIPSCHITZ_REL = 0.10
# criterion 9
N_TUPLES = 1000
FD_REL = 1e-6
FD_DIRECTIONS = 5

SOLVABLE = ("two_phase", "triple_junction", "concave_uniqueness", "variable_diffusion")


def report(capsys, n: int, ok: bool, detail: str):
    with capsys.disabled():
        print(f"\nCRITERION {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    """Solve and verify every solvable preset once."""
    out = {}
    for name in SOLVABLE:
        d = tmp_path_factory.mktemp(name)
        cfg = load_preset(name)
        t0 = time.perf_counter()
        code_s, sum_s = run("solve", cfg, d)
        wall = time.perf_counter() - t0
        code_v, sum_v = run("verify", cfg, d)
        code_a, sum_a = run("analyze", cfg, d)
        out[name] = dict(dir=d, cfg=cfg, wall=wall, solve=(code_s, sum_s), verify=(code_v, sum_v),
                         analyze=(code_a, sum_a))
    return out


def independent_laplace(n: int, boundary):
    """Five-point Dirichlet solve on the unit square assembled from 1D stencils."""
    h = 1.0 / (n - 1)
    m = n - 2
    T = sparse.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
    A = (sparse.kron(sparse.identity(m), T) + sparse.kron(T, sparse.identity(m))).tocsc()
    xs = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(xs, xs)
    B = boundary(X, Y)
    b = np.zeros((m, m))
    b[:, 0] += B[1:-1, 0]
    b[:, -1] += B[1:-1, -1]
    b[0, :] += B[0, 1:-1]
    b[-1, :] += B[-1, 1:-1]
    H = B.copy()
    H[1:-1, 1:-1] = spsolve(A, b.ravel()).reshape(m, m)
    return H, h


def test_criterion_01_two_phase_oracle(runs, capsys):
    r = runs["two_phase"]
    p = build_problem(r["cfg"])
    s = read_fields(r["dir"] / "fields.csv", p.grid)
    H, h = independent_laplace(p.grid.nx, lambda x, y: x - 0.5)
    err = float(np.max(np.abs(s.u[0] - s.u[1] - H)))
    rep = extract_interfaces(s)
    dev = max(float(np.max(np.abs(i.points[:, 0] - 0.5))) for i in rep.interfaces)
    ok = r["solve"][0] == EXIT_OK and err <= HARMONIC_TOL and dev <= h and r["wall"] < SOLVE_TIME_65
    report(capsys, 1, ok, f"sup|u1-u2-H|={err:.3e} (<= {HARMONIC_TOL}), interface offset={dev:.3e} (<= h={h:.4f}), "
                          f"solve {r['wall']:.2f}s (< {SOLVE_TIME_65:.0f}s)")
    assert ok


def _residual_at(n: int, name: str):
    cfg = load_preset(name).with_overrides(grid=n)
    p = build_problem(cfg)
    sol = solve_config(cfg, p)
    rep = extremality_residuals(sol, p, EXTREMALITY_C)
    g, s = p.grid, sol.state
    raw = 0.0
    for i in range(p.k):
        r1 = -laplacian5(g, s.u[i]) - p.reactions[i].f(s.u[i])
        r2 = hat_reaction(s, p, i) + laplacian5(g, hat(s, i))
        raw = max(raw, float(np.nanmax(np.where(g.interior, np.maximum(r1, r2), 0.0))))
    return rep.max_residual, raw


def test_criterion_02_extremality(runs, capsys):
    lines, ok = [], True
    for name in SOLVABLE:
        code, summ = runs[name]["verify"]
        ex = summ["results"]["extremality"]
        good = code == EXIT_OK and ex["ok"] and max(ex["sub"]) <= ex["tol"] and max(ex["hat"]) <= ex["tol"]
        ok &= good
        lines.append(f"{name}: sub={max(ex['sub']):.2e} hat={max(ex['hat']):.2e} tol={ex['tol']:.2e}")
    refine = []
    for name in ("two_phase", "concave_uniqueness"):
        r64, raw64 = _residual_at(65, name)
        r128, raw128 = _residual_at(129, name)
        good = r128 <= RESIDUAL_RATIO * r64
        ok &= good
        refine.append(f"{name}: r(1/128)={r128:.2e} <= {RESIDUAL_RATIO}*r(1/64)={RESIDUAL_RATIO * r64:.2e} "
                      f"(raw before rounding floor {raw128:.1e} vs {raw64:.1e})")
    report(capsys, 2, ok, f"C={EXTREMALITY_C}; " + "; ".join(lines + refine))
    assert ok


def test_criterion_03_acf(runs, capsys):
    r = runs["two_phase"]
    p = build_problem(r["cfg"])
    g = p.grid
    h = g.h
    s = read_fields(r["dir"] / "fields.csv", g)
    radii_all = [4 * h, 8 * h, 16 * h, 32 * h]
    worst, n_pts, full = 0.0, 0, 0
    for iface in extract_interfaces(s).interfaces:
        for x0 in iface.points:
            radii = [q for q in radii_all if g.contains_ball(tuple(x0), q)]
            if len(radii) < 2:
                continue
            tr = acf_product(s, tuple(x0), radii, eps_mono=ACF_MONO_EPS)
            worst = max(worst, tr.max_violation / max(tr.values))
            n_pts += 1
            full += len(radii) == 4
    # analytic pair (x^+, x^-) about the origin
    ga = build_grid(65, extent=2.0, origin=(-1.0, -1.0))
    pair = State(ga, np.stack([np.maximum(ga.x, 0), np.maximum(-ga.x, 0)]))
    tr = acf_product(pair, (0.0, 0.0), [4 * ga.h, 8 * ga.h, 16 * ga.h, 32 * ga.h])
    rel = float(np.max(np.abs(np.asarray(tr.values) - ACF_PAIR_VALUE))) / ACF_PAIR_VALUE
    ok = n_pts > 0 and full > 0 and worst <= ACF_MONO_EPS and rel <= ACF_PAIR_REL
    report(capsys, 3, ok, f"{n_pts} interface points ({full} with all four radii), worst drop/max={worst:.2e} "
                          f"(<= {ACF_MONO_EPS}); pair values {np.round(tr.values, 6).tolist()} vs {ACF_PAIR_VALUE:.4f}, "
                          f"rel err {rel:.2e} (<= {ACF_PAIR_REL})")
    assert ok


def test_criterion_04_triple_junction(runs, capsys):
    r = runs["triple_junction"]
    code, summ = r["analyze"]
    g = build_problem(r["cfg"]).grid
    mps = summ["multiple_points"]
    js = [j for j in summ["junctions"] if "angles_deg" in j]
    ok = code == EXIT_OK and len(mps) >= 1 and len(js) >= 1 and r["wall"] < JUNCTION_TIME
    detail = f"solve {r['wall']:.1f}s (< {JUNCTION_TIME:.0f}s)"
    if ok:
        j = js[0]
        dist = float(np.hypot(*j["location"]))
        angles = list(j["angles_deg"].values())
        decay = read_json(r["dir"] / "nodal_report.json")["junctions"][0]["decay_factors"]
        ok = (dist <= JUNCTION_DIST_H * g.h
              and all(abs(a - 120.0) <= ANGLE_TOL_DEG for a in angles)
              and abs(j["exponent"] - EXPONENT) <= EXPONENT_TOL
              and all(f >= DECAY_MIN for f in decay))
        detail += (f", |x_mp|={dist:.2e} (<= {JUNCTION_DIST_H}h={JUNCTION_DIST_H * g.h:.4f}), "
                   f"angles={np.round(angles, 3).tolist()}, exponent={j['exponent']:.4f}, "
                   f"decay factors={np.round(decay, 3).tolist()} (>= {DECAY_MIN})")
    report(capsys, 4, ok, detail)
    assert ok


@pytest.fixture(scope="session")
def concave_sweep(tmp_path_factory):
    cfg = load_preset("concave_uniqueness")
    assert cfg["sweep"]["seeds"] == N_STARTS
    assert tuple(cfg["sweep"]["eps"]) == EPS_LIST
    return run("sweep", cfg, tmp_path_factory.mktemp("concave_sweep"))


def test_criterion_05_uniqueness(concave_sweep, capsys):
    code, summ = concave_sweep
    ms = summ["results"]["multistart"]
    ok = len(ms["seeds"]) == N_STARTS and ms["relative_distance"] <= UNIQUE_REL and ms["relative_energy_spread"] <= SPREAD_REL
    report(capsys, 5, ok, f"{len(ms['seeds'])} starts, max L2 distance/|U|={ms['relative_distance']:.2e} (<= {UNIQUE_REL}), "
                          f"energy spread={ms['relative_energy_spread']:.2e} (<= {SPREAD_REL})")
    assert ok


def test_criterion_06_continuous_dependence(concave_sweep, tmp_path, capsys):
    code2, summ2 = run("sweep", load_preset("two_phase"), tmp_path)
    ok, parts = True, []
    for name, summ in (("concave_uniqueness", concave_sweep[1]), ("two_phase", summ2)):
        pert = summ["results"]["perturbation"]
        rows = sorted(pert["rows"], key=lambda q: -q["eps"])
        d = [q["distance"] for q in rows]
        good = (tuple(q["eps"] for q in rows) == EPS_LIST and all(a > b for a, b in zip(d, d[1:]))
                and d[-1] <= PERTURB_REL * pert["norm"])
        ok &= good
        parts.append(f"{name}: distances {[f'{v:.3e}' for v in d]}, |U|={pert['norm']:.3f}")
    report(capsys, 6, ok, "; ".join(parts) + f" (strictly decreasing, last <= {PERTURB_REL}|U|)")
    assert ok


def test_criterion_07_barriers(runs, capsys):
    ok, parts = True, []
    for name in SOLVABLE:
        code, summ = runs[name]["verify"]
        b = summ["results"]["barriers"]
        worst = max(max(b["upper_violation"]), max(b["lower_violation"]))
        good = b["ok"] and worst <= BARRIER_TOL
        ok &= good
        parts.append(f"{name}: {worst:.1e}")
    r = runs["two_phase"]
    p = build_problem(r["cfg"])
    s = read_fields(r["dir"] / "fields.csv", p.grid)
    bp = compute_barriers(p, s)
    gap = float(np.max(np.abs(np.maximum(bp.lower[0], 0) - s.u[0])))
    ok &= gap <= BARRIER_ORACLE_TOL
    report(capsys, 7, ok, f"max violation per preset {', '.join(parts)} (<= {BARRIER_TOL}); "
                          f"two-phase |Psi_1^+ - u_1|={gap:.2e} (<= {BARRIER_ORACLE_TOL})")
    assert ok


def test_criterion_08_lipschitz(tmp_path, capsys):
    cfg = load_preset("triple_junction")
    assert cfg["sweep"]["grids"] == [129, 257]
    code, summ = run("sweep", cfg, tmp_path)
    rows = summ["results"]["refinement"]
    a, b = rows[0]["L_max"], rows[1]["L_max"]
    rel = abs(a - b) / b
    ok = code == EXIT_OK and rel <= LIPSCHITZ_REL
    report(capsys, 8, ok, f"L(129)={a:.4f}, L(257)={b:.4f}, rel diff={rel:.2e} (<= {LIPSCHITZ_REL})")
    assert ok


def _richardson(fun, e):
    d1 = (fun(e) - fun(-e)) / (2 * e)
    d2 = (fun(e / 2) - fun(-e / 2)) / e
    return 2 * d2 - d1


def test_criterion_09_projection_and_gradient(capsys):
    rng = np.random.default_rng(2024)
    g = build_grid(3)
    bad_proj = 0
    for _ in range(N_TUPLES):
        k = int(rng.integers(2, 6))
        w = rng.random((k,) + g.shape) * rng.choice([1e-3, 1.0, 1e3])
        w[rng.random(w.shape) < 0.2] = 0.0
        p1 = project_segregated(w, g)
        p2 = project_segregated(p1.u, g)
        if not (np.array_equal(p1.u, p2.u) and is_segregated(p1, 0.0).ok):
            bad_proj += 1
    worst = 0.0
    for name in ("two_phase", "concave_uniqueness", "triple_junction"):
        cfg = load_preset(name).with_overrides(grid=33)
        p = build_problem(cfg)
        s = initial_state(p, "random", seed=11)
        grad = energy_gradient(s, p)
        for _ in range(FD_DIRECTIONS):
            v = rng.standard_normal(s.u.shape)
            v[:, ~p.grid.interior] = 0.0
            fd = _richardson(lambda t: energy(State(p.grid, s.u + t * v), p), 1e-5)
            an = float(np.sum(grad * v))
            worst = max(worst, abs(fd - an) / abs(an))
    ok = bad_proj == 0 and worst <= FD_REL
    report(capsys, 9, ok, f"projection failures {bad_proj}/{N_TUPLES}; worst gradient rel err {worst:.2e} "
                          f"over {FD_DIRECTIONS} directions x 3 presets (<= {FD_REL})")
    assert ok


def test_criterion_10_a2_gatekeeping(tmp_path, capsys):
    cfg = load_preset("a2_failure")
    p = build_problem(cfg)
    rep = check_A2(p, 0)
    h = p.grid.h
    lam1 = 8 / h**2 * np.sin(np.pi * h / 2) ** 2
    lam = p.reactions[0].lam
    code, summ = run("solve", cfg, tmp_path)
    named = any(f["check"] == "A2" for f in summ.get("failures", []))
    ok = lam > lam1 and not rep.holds and code == EXIT_CHECK and named
    report(capsys, 10, ok, f"lam={lam} > lambda_1,h={lam1:.4f}; min eigenvalue {rep.min_eigenvalue:.4f}; "
                           f"solve exit {code} naming A2={named}")
    assert ok
