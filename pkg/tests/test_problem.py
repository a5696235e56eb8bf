from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segsolve.errors import ConfigurationError
from segsolve.grid import build_grid
from segsolve.problem import (
    BoundaryData,
    ConcaveQuadratic,
    DiffusionCoeff,
    Linear,
    Logistic,
    Problem,
    SublinearCap,
    TransformedReaction,
    Zero,
    check_A2,
    make_reaction,
    rescale_to_unit_diffusion,
    uniqueness_condition_check,
    validate_admissible,
)

from conftest import concave_problem, two_phase_problem

REACTIONS = [Zero(), Linear(3.0), Linear(-2.0), ConcaveQuadratic(0.5), Logistic(2.0), SublinearCap(25.0)]


def lam1(h):
    return 8 / h**2 * np.sin(np.pi * h / 2) ** 2


@pytest.mark.parametrize("r", REACTIONS, ids=repr)
def test_potential_derivative_is_reaction(r):
    s = np.linspace(-2.0, 3.0, 1001)
    s = s[np.abs(s) > 1e-3]
    step = 1e-6
    fd = (r.F(s + step) - r.F(s - step)) / (2 * step)
    assert np.allclose(fd, r.f(s), atol=1e-6, rtol=1e-6)


@pytest.mark.parametrize("r", REACTIONS, ids=repr)
def test_reaction_odd_and_growth_bound(r):
    s = np.linspace(0.0, 5.0, 501)
    assert np.allclose(r.f(-s), -r.f(s))
    assert np.all(np.abs(r.f(s)) <= r.growth_bound * s + 1e-12)
    assert r.f(np.array(0.0)) == 0


def test_reaction_values():
    assert ConcaveQuadratic(0.5).f(np.array(2.0)) == pytest.approx(-2.0)
    sc = SublinearCap(8.0)
    assert sc.f(np.array(1 / 64)) == pytest.approx(0.125)
    assert sc.f(np.array(8.0)) == pytest.approx(2.0)
    assert Logistic(2.0).f(np.array(0.5)) == pytest.approx(0.5 * (2.0 - 0.5))


def test_make_reaction_errors():
    assert make_reaction("linear", lam=2.0) == Linear(2.0)
    with pytest.raises(ConfigurationError):
        make_reaction("cubic")
    with pytest.raises(ConfigurationError):
        make_reaction("linear")
    with pytest.raises(ConfigurationError):
        SublinearCap(-1.0)


def test_problem_invariants():
    p = two_phase_problem(9)
    with pytest.raises(ConfigurationError):
        Problem(p.grid, (Zero(),), (1.0,), BoundaryData(p.grid, p.boundary.values[:1]))
    with pytest.raises(ConfigurationError):
        Problem(p.grid, (Zero(), Zero()), (1.0, -1.0), p.boundary)
    assert p.unit_diffusion and p.equal_diffusions


def test_boundary_values_zeroed_off_boundary():
    g = build_grid(9)
    bd = BoundaryData(g, np.ones((2,) + g.shape))
    assert np.all(bd.values[:, g.interior] == 0)
    rep = validate_admissible(bd)
    assert not rep.ok
    assert {v["kind"] for v in rep.violations} == {"overlap"}


def test_admissibility_negative_and_clean():
    p = two_phase_problem(9)
    assert validate_admissible(p.boundary).ok
    bad = p.boundary.values.copy()
    bad[0, 0, 0] = -1.0
    rep = validate_admissible(BoundaryData(p.grid, bad))
    assert any(v["kind"] == "negative" for v in rep.violations)


@pytest.mark.parametrize("lam", [5.0, 10.0, 25.0, 40.0])
def test_check_A2_matches_sine_eigenvalue(lam):
    p = two_phase_problem(33)
    p = Problem(p.grid, (Linear(lam), Zero()), (1.0, 1.0), p.boundary)
    rep = check_A2(p, 0)
    expect = lam1(p.grid.h) - lam
    assert rep.min_eigenvalue == pytest.approx(expect, rel=1e-8, abs=1e-8)
    assert rep.holds == (expect > 0)


def test_check_A2_rejects_sublinear_cap_above_eigenvalue():
    p = two_phase_problem(33)
    p = Problem(p.grid, (SublinearCap(25.0), Zero()), (1.0, 1.0), p.boundary)
    assert not check_A2(p, 0).holds
    assert check_A2(p, 1).holds
    p = Problem(p.grid, (SublinearCap(15.0), Zero()), (1.0, 1.0), p.boundary)
    assert check_A2(p, 0).holds


def test_uniqueness_condition_concave():
    p = concave_problem(17)
    rep = uniqueness_condition_check(p, np.ones(p.grid.shape))
    assert rep.holds
    q = Problem(p.grid, (Logistic(4.0),) * 3, (1.0,) * 3, p.boundary)
    assert not uniqueness_condition_check(q, np.ones(p.grid.shape)).holds


def test_rescale_constant_diffusion():
    p = two_phase_problem(9)
    p2 = Problem(p.grid, (Linear(3.0), Zero()), (2.0, 2.0), p.boundary)
    rp = rescale_to_unit_diffusion(p2)
    assert rp.problem.unit_diffusion
    r = rp.problem.reactions[0]
    assert isinstance(r, TransformedReaction)
    v = np.linspace(0, 2, 7)
    jj, ii = np.nonzero(p.grid.interior)
    idx = (jj[:7], ii[:7])
    # f~(v) = f(v/d)/d with q = 0 for constant d
    assert np.allclose(r.f(v, idx), 3.0 * (v / 2) / 2)
    assert np.allclose(rp.problem.boundary.values, 2.0 * p.boundary.values)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2.0))
def test_rescale_round_trip(a):
    p = two_phase_problem(9)
    d = DiffusionCoeff(1.0 + a * ((p.grid.x - 0.5) ** 2 + (p.grid.y - 0.5) ** 2))
    p2 = Problem(p.grid, (Zero(), Zero()), (d, d), p.boundary)
    rp = rescale_to_unit_diffusion(p2)
    u = np.random.default_rng(0).random((2,) + p.grid.shape)
    assert np.allclose(rp.backward(rp.forward(u)), u)


def test_linear_extension_values():
    r = Linear(1.0)
    assert r.f(np.array(2.0)) == 2.0 and r.F(np.array(2.0)) == 2.0
    assert r.f(np.array(-2.0)) == -2.0 and r.F(np.array(-2.0)) == 2.0
    for t in REACTIONS:
        assert t.f(np.array(0.0)) == 0 and t.F(np.array(0.0)) == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_lipschitz_bound_sampled(a, b):
    for t in REACTIONS:
        assert abs(float(t.f(np.array(a)) - t.f(np.array(b)))) <= t.lipschitz * abs(a - b) + 1e-12


def test_check_A2_zero_reaction_and_monotone():
    p = two_phase_problem(65)
    rep = check_A2(p, 0)
    assert rep.holds
    assert rep.min_eigenvalue == pytest.approx(2 * np.pi**2, rel=0.05)
    assert not check_A2(Problem(p.grid, (Linear(30.0), Zero()), (1.0, 1.0), p.boundary), 0).holds
    d = DiffusionCoeff(1.0 + 3 * p.grid.x**2)
    assert check_A2(Problem(p.grid, (Zero(), Zero()), (d, d), p.boundary), 0).holds
    mus = [check_A2(Problem(p.grid, (Linear(b), Zero()), (1.0, 1.0), p.boundary), 0).min_eigenvalue
           for b in (0.0, 5.0, 10.0, 20.0)]
    assert np.all(np.diff(mus) < 0)


def test_uniqueness_condition_constants():
    p = two_phase_problem(9)
    one = np.ones(p.grid.shape)
    q = Problem(p.grid, (Linear(4.0), Linear(4.0)), (1.0, 1.0), p.boundary)
    rep = uniqueness_condition_check(q, one)
    assert not rep.holds
    assert rep.worst == pytest.approx(-2.0)
    rep = uniqueness_condition_check(Problem(p.grid, (ConcaveQuadratic(1.0),) * 2, (1.0, 1.0), p.boundary), one)
    assert rep.holds


def test_rescale_identity_and_algebra():
    p = two_phase_problem(9)
    rp = rescale_to_unit_diffusion(p)
    assert rp.problem.reactions == p.reactions
    u = np.random.default_rng(2).random((2,) + p.grid.shape)
    assert np.array_equal(rp.forward(u), u)
    p2 = Problem(p.grid, (Zero(), Zero()), (2.0, 2.0), p.boundary)
    rp2 = rescale_to_unit_diffusion(p2)
    assert np.allclose(rp2.forward(np.full((2,) + p.grid.shape, 3.0)), 6.0)
    assert np.allclose(rp2.backward(rp2.forward(u)), u, rtol=0, atol=1e-12)


def test_rescaled_energy_matches_constant_diffusion():
    from segsolve.minimizer import energy, solve
    from segsolve.segregation import State

    p = concave_problem(17)
    p2 = Problem(p.grid, p.reactions, (2.0,) * 3, p.boundary)
    rp = rescale_to_unit_diffusion(p2)
    sol_v = solve(rp.problem)
    u = State(p.grid, rp.backward(sol_v.state.u))
    assert energy(u, p2) == pytest.approx(sol_v.energy, rel=1e-10)
