from __future__ import annotations

import numpy as np
import pytest

from segsolve.grid import build_grid
from segsolve.problem import BoundaryData, ConcaveQuadratic, Problem, Zero
from segsolve.minimizer import solve


def two_phase_problem(n: int = 33) -> Problem:
    g = build_grid(n)
    bd = BoundaryData.from_functions(
        g, [lambda x, y: np.maximum(x - 0.5, 0.0), lambda x, y: np.maximum(0.5 - x, 0.0)]
    )
    return Problem(g, (Zero(), Zero()), (1.0, 1.0), bd)


def _bump(t, a, b):
    return np.where((t > a) & (t < b), np.sin(np.pi * (t - a) / (b - a)), 0.0)


def concave_problem(n: int = 33, c: float = 0.5) -> Problem:
    g = build_grid(n)
    funcs = [
        lambda x, y: np.where(np.isclose(y, 0), _bump(x, 0.1, 0.6), 0.0),
        lambda x, y: np.where(np.isclose(x, 1), _bump(y, 0.1, 0.9), 0.0),
        lambda x, y: np.where(np.isclose(y, 1), _bump(x, 0.2, 0.9), 0.0)
        + np.where(np.isclose(x, 0), _bump(y, 0.3, 0.8), 0.0),
    ]
    bd = BoundaryData.from_functions(g, funcs)
    return Problem(g, (ConcaveQuadratic(c),) * 3, (1.0,) * 3, bd)


def junction_problem(n: int = 65) -> Problem:
    g = build_grid(n, extent=2.0, shape="disk", origin=(-1.0, -1.0), center=(0.0, 0.0), radius=1.0)

    def lobe(i):
        def f(x, y):
            th = np.mod(np.arctan2(y, x) + np.pi / 3, 2 * np.pi)
            v = np.hypot(x, y) ** 1.5 * np.abs(np.cos(1.5 * (th - np.pi / 3)))
            return np.where((th >= 2 * np.pi / 3 * i) & (th < 2 * np.pi / 3 * (i + 1)), v, 0.0)

        return f

    bd = BoundaryData.from_functions(g, [lobe(i) for i in range(3)])
    return Problem(g, (Zero(),) * 3, (1.0,) * 3, bd)


@pytest.fixture(scope="session")
def two_phase():
    p = two_phase_problem(33)
    return p, solve(p)


@pytest.fixture(scope="session")
def concave():
    p = concave_problem(33)
    return p, solve(p)


@pytest.fixture(scope="session")
def junction():
    p = junction_problem(65)
    return p, solve(p)


def sector_state(g, order: int, theta0: float = 0.0, center=(0.0, 0.0)) -> "State":
    """Closed-form field r^(order/2) |cos(order/2 (theta + theta0))| split into its lobes."""
    from segsolve.segregation import State

    r = np.hypot(g.x - center[0], g.y - center[1])
    th = np.arctan2(g.y - center[1], g.x - center[0])
    phase = 0.5 * order * (th + theta0)
    prof = r ** (0.5 * order) * np.abs(np.cos(phase))
    lobe = np.mod(np.floor((phase + 0.5 * np.pi) / np.pi), order).astype(int)
    return State(g, np.stack([np.where(lobe == i, prof, 0.0) for i in range(order)]))
