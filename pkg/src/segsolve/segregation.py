"""Segregated states, the hat operation, the positive-part projection and multiplicity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, GridMismatchError
from .grid import Grid

__all__ = [
    "State",
    "hat",
    "hat_all",
    "project_segregated",
    "SegregationCheck",
    "is_segregated",
    "MultiplicityMap",
    "multiplicity_map",
]


@dataclass(frozen=True, eq=False)
class State:
    """``k`` node fields ``u`` stacked as a ``(k, ny, nx)`` array on ``grid``."""

    grid: Grid
    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 3 or u.shape[1:] != self.grid.shape:
            raise GridMismatchError(f"state array has shape {u.shape}, grid is {self.grid.shape}")
        u[:, ~self.grid.inside] = 0.0
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def k(self) -> int:
        return self.u.shape[0]

    def total(self) -> np.ndarray:
        """``U = sum_i u_i``."""
        return self.u.sum(axis=0)

    def labels(self) -> np.ndarray:
        """Index of the positive component at each node, ``-1`` where all vanish."""
        lab = np.argmax(self.u, axis=0)
        return np.where(self.u.max(axis=0) > 0, lab, -1)

    def with_u(self, u) -> "State":
        return State(self.grid, u)

    def __eq__(self, other):
        return isinstance(other, State) and other.grid.shape == self.grid.shape and np.array_equal(self.u, other.u)

    __hash__ = None


def _same_grid(a: State, b: State):
    if a.grid is not b.grid and a.grid.shape != b.grid.shape:
        raise GridMismatchError("states live on different grids")


def hat_all(u: np.ndarray) -> np.ndarray:
    """All hats at once: ``u_i - sum_{j != i} u_j = 2 u_i - sum_j u_j``."""
    u = np.asarray(u, dtype=float)
    return 2.0 * u - u.sum(axis=0, keepdims=True)


def hat(s: State, i: int) -> np.ndarray:
    if not 0 <= i < s.k:
        raise IndexError(f"density index {i} out of range for k={s.k}")
    others = s.u.sum(axis=0) - s.u[i]
    return s.u[i] - others


def project_segregated(w, grid: Grid | None = None, boundary=None) -> State:
    """``v_i = (w_i - sum_{j != i} w_j)^+`` after clamping ``w`` at 0.

    ``w`` is a State or a ``(k, ny, nx)`` array (then ``grid`` is required).
    When ``boundary`` (a ``(k, ny, nx)`` array or BoundaryData) is given,
    boundary nodes are reset to it afterwards.  At most one output component
    is positive at each node: if ``v_i > 0`` then ``w_i`` exceeds the sum of
    the others, so no other component can.  Only the largest component is
    kept so the property survives rounding.
    """
    if isinstance(w, State):
        grid = w.grid if grid is None else grid
        if grid.shape != w.grid.shape:
            raise GridMismatchError("projection target grid differs from the state grid")
        arr = w.u
    else:
        if grid is None:
            raise ValueError("grid is required when projecting a bare array")
        arr = np.asarray(w, dtype=float)
        if arr.ndim != 3 or arr.shape[1:] != grid.shape:
            raise GridMismatchError(f"array of shape {arr.shape} does not match grid {grid.shape}")
    arr = np.maximum(arr, 0.0)
    total = arr.sum(axis=0, keepdims=True)
    v = np.maximum(arr - (total - arr), 0.0)
    # guard against rounding leaving two tiny positives at near-ties
    keep = np.arange(v.shape[0])[:, None, None] == np.argmax(v, axis=0)[None]
    v = np.where(keep, v, 0.0)
    if boundary is not None:
        bv = getattr(boundary, "values", boundary)
        if bv.shape != v.shape:
            raise GridMismatchError("boundary data shape differs from the state")
        v[:, grid.boundary] = bv[:, grid.boundary]
    return State(grid, v)


@dataclass
class SegregationCheck:
    ok: bool
    worst_node: tuple | None
    worst_value: float

    def __bool__(self) -> bool:
        return self.ok


def is_segregated(s: State, tol: float = 0.0) -> SegregationCheck:
    """At most one component above ``tol`` at every node.

    ``worst_value`` is the largest second-largest component; ``worst_node``
    is where it occurs (``None`` for ``k < 2``).
    """
    if s.k < 2:
        return SegregationCheck(True, None, 0.0)
    srt = np.sort(s.u, axis=0)
    second = srt[-2]
    j, i = np.unravel_index(int(np.argmax(second)), second.shape)
    worst = float(second[j, i])
    return SegregationCheck(worst <= tol, (int(j), int(i)), worst)


@dataclass
class MultiplicityMap:
    """Node counts of active densities; ``-1`` at masked-out nodes."""

    m: np.ndarray
    r: float
    tol: float

    def level_set(self, h: int) -> np.ndarray:
        """Boolean mask of nodes with multiplicity at least ``h``."""
        return self.m >= h


def _disk_footprint(r: float, h: float) -> np.ndarray:
    n = int(np.floor(r / h + 1e-9))
    jj, ii = np.mgrid[-n : n + 1, -n : n + 1]
    return (ii * ii + jj * jj) * h * h <= r * r * (1 + 1e-12)


def multiplicity_map(s: State, r: float | None = None, tol: float | None = None,
                     boundary_max: float | None = None) -> MultiplicityMap:
    """Count densities with a node above ``tol`` in the closed ball ``B(x, r)``.

    Defaults: ``r = 3h`` and ``tol = 10 h max(phi)``, with ``max(phi)`` the
    largest boundary datum (passed as ``boundary_max``, else the largest
    boundary value of the state itself).
    """
    g = s.grid
    r = 3.0 * g.h if r is None else float(r)
    if r < 2.0 * g.h * (1 - 1e-12):
        raise ConfigurationError(f"multiplicity radius {r} is below 2h = {2 * g.h}")
    if tol is None:
        if boundary_max is None:
            boundary_max = float(s.u[:, g.boundary].max()) if g.boundary.any() else 0.0
        tol = 10.0 * g.h * boundary_max
    fp = _disk_footprint(r, g.h)
    m = np.zeros(g.shape, dtype=np.int64)
    for i in range(s.k):
        active = (s.u[i] > tol) & g.inside
        m += ndimage.binary_dilation(active, structure=fp).astype(np.int64)
    m[~g.inside] = -1
    return MultiplicityMap(m, r, float(tol))
