from __future__ import annotations

import numpy as np
import pytest

from segsolve.errors import DomainError
from segsolve.freeboundary import (
    adjacency_graph,
    extract_interfaces,
    junction_analysis,
    label_map,
    locate_multiple_points,
    support_connectedness,
)
from segsolve.grid import build_grid
from segsolve.segregation import State


def test_two_phase_interface_is_vertical_segment(two_phase):
    p, sol = two_phase
    rep = extract_interfaces(sol)
    assert len(rep.interfaces) == 1
    iface = rep.interfaces[0]
    assert set(iface.labels) == {0, 1}
    assert np.max(np.abs(iface.points[:, 0] - 0.5)) < 1e-9
    assert iface.length == pytest.approx(1.0 - 2 * p.grid.h, abs=2 * p.grid.h)
    assert rep.multiple_points == []
    assert locate_multiple_points(rep, sol) == []
    g = adjacency_graph(rep)
    assert g.edge_set() == {(0, 1)}
    assert g.degree(0) == 1


def test_label_map_codes():
    g = build_grid(9, extent=2.0, shape="disk", origin=(-1, -1), center=(0, 0), radius=1.0)
    u = np.zeros((2,) + g.shape)
    u[0, 4, 4] = 1.0
    lab = label_map(State(g, u))
    assert lab[4, 4] == 0
    assert lab[0, 0] == -2
    assert lab[4, 3] == -1


def test_triple_junction_small(junction):
    p, sol = junction
    rep = extract_interfaces(sol)
    mps = locate_multiple_points(rep, sol)
    assert len(mps) == 1
    mp = mps[0]
    assert mp.multiplicity == 3
    assert np.hypot(*mp.location) <= 2 * p.grid.h
    assert adjacency_graph(rep).edge_set() == {(0, 1), (0, 2), (1, 2)}
    ja = junction_analysis(sol, mp.location, 3)
    ang = np.degrees(list(ja.density_angles().values()))
    assert np.allclose(ang, 120.0, atol=5.0)
    assert ja.angle_sum == pytest.approx(2 * np.pi)
    assert ja.exponent == pytest.approx(1.5, abs=0.15)
    assert abs(ja.theta0) < np.radians(5)


def test_junction_analysis_arguments(junction):
    p, sol = junction
    with pytest.raises(ValueError):
        junction_analysis(sol, (0.0, 0.0), 2)
    with pytest.raises(DomainError):
        junction_analysis(sol, (0.0, 0.0), 3, radii=[1.5])


def test_support_connectedness(two_phase, junction):
    _, sol = two_phase
    assert support_connectedness(sol, 0) == 1
    _, sol3 = junction
    assert all(support_connectedness(sol3, i) == 1 for i in range(3))


from conftest import junction_problem, sector_state  # noqa: E402
from segsolve.minimizer import solve  # noqa: E402


def _disk(n):
    return build_grid(n, extent=2.0, shape="disk", origin=(-1, -1), center=(0, 0), radius=1.0)


def test_two_phase_interface_vertical(two_phase):
    _, sol = two_phase
    pts = extract_interfaces(sol).interfaces[0].points
    dx, dy = pts[-1] - pts[0]
    assert np.degrees(np.arctan2(abs(dx), abs(dy))) < 2.0


def test_zero_state_has_one_zero_region():
    g = build_grid(17)
    rep = extract_interfaces(State(g, np.zeros((2,) + g.shape)))
    assert rep.interfaces == []
    assert len(rep.zero_regions) == 1


@pytest.mark.parametrize("order, theta0", [(3, 0.0), (3, 0.3), (4, 0.0), (4, -0.2), (5, 0.1)])
def test_closed_form_junctions(order, theta0):
    g = _disk(257)
    s = sector_state(g, order, theta0)
    rep = extract_interfaces(s)
    mps = locate_multiple_points(rep, s)
    assert len(mps) == 1 and mps[0].multiplicity == order
    ja = junction_analysis(s, (0.0, 0.0), order)
    assert ja.exponent == pytest.approx(order / 2, abs=0.05)
    ang = np.degrees(list(ja.density_angles().values()))
    assert np.allclose(ang, 360.0 / order, atol=2.0)
    assert ja.angle_sum == pytest.approx(2 * np.pi, abs=1e-6)
    period = 2 * np.pi / order
    err = (ja.theta0 - theta0 + period / 2) % period - period / 2
    assert abs(np.degrees(err)) < 2.0


def test_label_swap_equivariance(junction):
    _, sol = junction
    perm = [2, 0, 1]
    a = extract_interfaces(sol)
    b = extract_interfaces(State(sol.state.grid, sol.state.u[perm]))
    amap = {tuple(sorted(perm.index(l) for l in i.labels)): i.points for i in a.interfaces}
    assert len(a.interfaces) == len(b.interfaces)
    for iface in b.interfaces:
        key = tuple(sorted(iface.labels))
        assert np.allclose(np.sort(amap[key], axis=0), np.sort(iface.points, axis=0))


def test_multiple_points_stable_under_refinement():
    locs = []
    for n in (129, 257):
        sol = solve(junction_problem(n))
        rep = extract_interfaces(sol)
        locs.append(np.array([m.location for m in locate_multiple_points(rep, sol)]))
    a, b = locs
    assert len(a) == len(b) == 1
    assert np.max(np.hypot(*(a - b).T)) <= 2 * (2.0 / 256)


def test_absent_density_not_a_vertex():
    from segsolve.problem import BoundaryData, ConcaveQuadratic, Problem

    g = build_grid(33)
    phi = np.zeros((3,) + g.shape)
    phi[0][g.boundary] = np.maximum(g.x - 0.5, 0)[g.boundary]
    phi[1][g.boundary] = np.maximum(0.5 - g.x, 0)[g.boundary]
    p = Problem(g, (ConcaveQuadratic(0.5),) * 3, (1.0,) * 3, BoundaryData(g, phi))
    sol = solve(p)
    graph = adjacency_graph(extract_interfaces(sol))
    assert 2 not in graph.vertices
    assert graph.edge_set() == {(0, 1)}


def test_two_bump_components(concave):
    g = build_grid(33)
    u = np.zeros((2,) + g.shape)
    u[0] = np.where(np.hypot(g.x - 0.25, g.y - 0.5) < 0.15, 1.0, 0.0)
    u[0] += np.where(np.hypot(g.x - 0.75, g.y - 0.5) < 0.15, 1.0, 0.0)
    assert support_connectedness(State(g, u), 0) == 2
    _, sol = concave
    assert [support_connectedness(sol, i) for i in range(3)] == [1, 1, 1]
