"""Node lattices and the discrete operators built on them.

A :class:`Grid` is a uniform ``ny x nx`` node lattice.  Fields are plain
``numpy`` arrays of shape ``grid.shape`` indexed ``[j, i]`` (``j`` along y,
``i`` along x).  Nodes outside the domain are *masked out*; operators never
read them and write ``NaN`` (laplacian) or ``0`` (quadrature) there.

Edges and cells
---------------
A *cell* is the square spanned by four lattice nodes.  A cell is *valid* when
all four corners are masked in; invalid cells are dropped from every
quadrature.  The Dirichlet energy of a node field is accumulated per cell
from the four edge differences of the cell (opposite edges averaged), so a
lattice edge carries weight 1/2 for every valid cell it borders.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import ConfigurationError, DomainError, GridMismatchError

__all__ = [
    "Grid",
    "build_grid",
    "check_field",
    "laplacian5",
    "gradient_energy_density",
    "integrate",
    "ball_dirichlet_integral",
    "disk_rectangle_area",
    "cut_edge_energy",
    "cut_edge_energy_partials",
    "dirichlet_solve",
]


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform node lattice with interior/boundary classification.

    Build instances with :func:`build_grid`; the constructor does not
    validate.
    """

    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)
    shape_kind: str = "rectangle"
    center: tuple[float, float] | None = None
    radius: float | None = None
    inside: np.ndarray = field(repr=False, default=None)
    interior: np.ndarray = field(repr=False, default=None)
    boundary: np.ndarray = field(repr=False, default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @cached_property
    def x(self) -> np.ndarray:
        xs = self.origin[0] + self.h * np.arange(self.nx)
        return np.broadcast_to(xs[None, :], self.shape)

    @cached_property
    def y(self) -> np.ndarray:
        ys = self.origin[1] + self.h * np.arange(self.ny)
        return np.broadcast_to(ys[:, None], self.shape)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """``(xmin, xmax, ymin, ymax)`` of the lattice."""
        x0, y0 = self.origin
        return (x0, x0 + self.h * (self.nx - 1), y0, y0 + self.h * (self.ny - 1))

    @cached_property
    def cell_valid(self) -> np.ndarray:
        m = self.inside
        return m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]

    @cached_property
    def hedge_cells(self) -> np.ndarray:
        """Number of valid cells bordering each horizontal edge, shape (ny, nx-1)."""
        c = self.cell_valid.astype(float)
        out = np.zeros((self.ny, self.nx - 1))
        out[:-1, :] += c
        out[1:, :] += c
        return out

    @cached_property
    def vedge_cells(self) -> np.ndarray:
        """Number of valid cells bordering each vertical edge, shape (ny-1, nx)."""
        c = self.cell_valid.astype(float)
        out = np.zeros((self.ny - 1, self.nx))
        out[:, :-1] += c
        out[:, 1:] += c
        return out

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Quadrature weight of each node: h^2 times (valid cells touching it)/4."""
        c = self.cell_valid.astype(float)
        w = np.zeros(self.shape)
        w[:-1, :-1] += c
        w[:-1, 1:] += c
        w[1:, :-1] += c
        w[1:, 1:] += c
        return w * (self.h**2 / 4.0)

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Map node -> position in the vector of interior unknowns (-1 elsewhere)."""
        idx = np.full(self.shape, -1, dtype=np.int64)
        idx[self.interior] = np.arange(int(self.interior.sum()))
        return idx

    def distance_to_boundary(self) -> np.ndarray:
        """Euclidean distance of every node to the domain boundary."""
        xmin, xmax, ymin, ymax = self.extent
        if self.shape_kind == "disk":
            cx, cy = self.center
            return self.radius - np.hypot(self.x - cx, self.y - cy)
        return np.minimum.reduce(
            [self.x - xmin, xmax - self.x, self.y - ymin, ymax - self.y]
        )

    def contains_ball(self, x0: tuple[float, float], r: float) -> bool:
        tol = 1e-9 * self.h
        xmin, xmax, ymin, ymax = self.extent
        if self.shape_kind == "disk":
            cx, cy = self.center
            return np.hypot(x0[0] - cx, x0[1] - cy) + r <= self.radius + tol
        return (
            x0[0] - r >= xmin - tol
            and x0[0] + r <= xmax + tol
            and x0[1] - r >= ymin - tol
            and x0[1] + r <= ymax + tol
        )

    def nearest_node(self, point: tuple[float, float]) -> tuple[int, int]:
        i = int(round((point[0] - self.origin[0]) / self.h))
        j = int(round((point[1] - self.origin[1]) / self.h))
        return (min(max(j, 0), self.ny - 1), min(max(i, 0), self.nx - 1))


def build_grid(
    nx: int,
    ny: int | None = None,
    extent: float = 1.0,
    shape: str = "rectangle",
    *,
    origin: tuple[float, float] = (0.0, 0.0),
    center: tuple[float, float] | None = None,
    radius: float | None = None,
) -> Grid:
    """Build a lattice of ``nx x ny`` nodes with spacing ``extent / (nx - 1)``.

    ``extent`` is the length of the x side; the y side is ``h * (ny - 1)``.
    For ``shape="disk"`` the domain is the closed disk of the given center and
    radius (default: inscribed in the lattice); nodes outside it are masked
    out.  Boundary nodes are masked-in nodes on the lattice edge or with a
    masked-out node among their 8 neighbours, so every interior node has four
    complete cells around it.
    """
    ny = nx if ny is None else ny
    if int(nx) != nx or int(ny) != ny or nx < 3 or ny < 3:
        raise ConfigurationError(f"node counts must be integers >= 3, got nx={nx}, ny={ny}")
    if not np.isfinite(extent) or extent <= 0:
        raise ConfigurationError(f"extent must be positive, got {extent}")
    nx, ny = int(nx), int(ny)
    h = float(extent) / (nx - 1)
    origin = (float(origin[0]), float(origin[1]))
    xs = origin[0] + h * np.arange(nx)
    ys = origin[1] + h * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)

    if shape == "rectangle":
        inside = np.ones((ny, nx), dtype=bool)
        center = radius = None
    elif shape == "disk":
        if center is None:
            center = (origin[0] + 0.5 * h * (nx - 1), origin[1] + 0.5 * h * (ny - 1))
        if radius is None:
            radius = 0.5 * h * (min(nx, ny) - 1)
        center = (float(center[0]), float(center[1]))
        radius = float(radius)
        if radius < 2 * h:
            raise ConfigurationError(f"disk radius {radius} is below two grid spacings")
        inside = np.hypot(X - center[0], Y - center[1]) <= radius * (1 + 1e-12)
    else:
        raise ConfigurationError(f"unknown domain shape {shape!r}")

    padded = np.zeros((ny + 2, nx + 2), dtype=bool)
    padded[1:-1, 1:-1] = inside
    full_nbhd = np.ones((ny, nx), dtype=bool)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            full_nbhd &= padded[1 + dj : ny + 1 + dj, 1 + di : nx + 1 + di]
    interior = inside & full_nbhd
    boundary = inside & ~interior
    if not interior.any():
        raise ConfigurationError("grid has no interior nodes")
    return Grid(nx, ny, h, origin, shape, center, radius, inside, interior, boundary)


def check_field(grid: Grid, f, name: str = "field") -> np.ndarray:
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.shape, float(arr))
    if arr.shape[-2:] != grid.shape:
        raise GridMismatchError(f"{name} has shape {arr.shape}, grid is {grid.shape}")
    return arr


def laplacian5(grid: Grid, f) -> np.ndarray:
    """Five-point Laplacian at interior nodes; ``NaN`` elsewhere.

    Works on a single field or a stack ``(..., ny, nx)``.
    """
    f = check_field(grid, f)
    out = np.full(f.shape, np.nan)
    c = f[..., 1:-1, 1:-1]
    lap = (f[..., 1:-1, 2:] + f[..., 1:-1, :-2] + f[..., 2:, 1:-1] + f[..., :-2, 1:-1] - 4.0 * c)
    out[..., 1:-1, 1:-1] = lap / grid.h**2
    out[..., ~grid.interior] = np.nan
    return out


def cut_edge_energy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared increment of the positive part of the linear interpolant a -> b.

    Equals ``(a - b)**2`` times the fraction of the edge where the
    interpolant is positive.  For every pair ``g(a, b) + g(-a, -b) == (a-b)**2``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros(np.broadcast(a, b).shape)
    pp = (a > 0) & (b > 0)
    pn = (a > 0) & (b <= 0)
    np_ = (a <= 0) & (b > 0)
    d = a - b
    out = np.where(pp, d * d, out)
    out = np.where(pn, a * d, out)
    out = np.where(np_, -b * d, out)
    return out


def cut_edge_energy_partials(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of :func:`cut_edge_energy`.

    At an endpoint value of exactly zero the two one-sided derivatives are
    averaged, which is what a central difference sees across the kink.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def side(v):
        pos = np.where(v > 0, 1.0, np.where(v < 0, 0.0, 0.5))
        return pos, 1.0 - pos

    ap, an = side(a)
    bp, bn = side(b)
    # branch formulas: ++ : (a-b)^2 ; +- : a(a-b) ; -+ : b(b-a) ; -- : 0
    da = ap * bp * 2 * (a - b) + ap * bn * (2 * a - b) + an * bp * (-b)
    db = ap * bp * 2 * (b - a) + ap * bn * (-a) + an * bp * (2 * b - a)
    return da, db


def _edge_diffs(f):
    return f[..., :, 1:] - f[..., :, :-1], f[..., 1:, :] - f[..., :-1, :]


def gradient_energy_density(grid: Grid, f, d=1.0, *, positive_part: bool = False) -> np.ndarray:
    """Per-cell ``|grad f|^2 * mean(d^2) * h^2``; shape ``(ny-1, nx-1)``.

    The squared gradient of a cell is the mean of its two horizontal edge
    increments squared plus the mean of its two vertical ones, over ``h^2``.
    With ``positive_part`` each edge contributes the energy of the positive
    part of the linear interpolant instead (see :func:`cut_edge_energy`).
    Invalid cells hold 0.
    """
    f = check_field(grid, f)
    d = check_field(grid, d, "diffusion")
    if positive_part:
        gh = cut_edge_energy(f[:, :-1], f[:, 1:])
        gv = cut_edge_energy(f[:-1, :], f[1:, :])
    else:
        dh, dv = _edge_diffs(f)
        gh, gv = dh * dh, dv * dv
    cell = 0.5 * (gh[:-1, :] + gh[1:, :]) + 0.5 * (gv[:, :-1] + gv[:, 1:])
    d2 = d * d
    d2_cell = 0.25 * (d2[:-1, :-1] + d2[:-1, 1:] + d2[1:, :-1] + d2[1:, 1:])
    out = cell * d2_cell
    out[~grid.cell_valid] = 0.0
    return out


def integrate(grid: Grid, f) -> float:
    """Cell quadrature: mean of the four corners times ``h^2`` over valid cells."""
    f = check_field(grid, f)
    cell = 0.25 * (f[:-1, :-1] + f[:-1, 1:] + f[1:, :-1] + f[1:, 1:])
    return float(np.sum(np.where(grid.cell_valid, cell, 0.0)) * grid.h**2)


def _seg_area_under(x1, x2, r):
    """Integral of sqrt(r^2 - x^2) over [x1, x2] (|x| <= r)."""

    def P(x):
        x = min(max(x, -r), r)
        return 0.5 * (x * np.sqrt(max(r * r - x * x, 0.0)) + r * r * np.arcsin(x / r))

    return P(x2) - P(x1)


def disk_rectangle_area(xa: float, xb: float, ya: float, yb: float, r: float) -> float:
    """Exact area of ``[xa, xb] x [ya, yb]`` intersected with the disk of radius r at 0."""
    lo, hi = max(xa, -r), min(xb, r)
    if lo >= hi or ya >= yb:
        return 0.0
    cuts = {lo, hi}
    for yv in (ya, yb):
        if abs(yv) < r:
            s = np.sqrt(r * r - yv * yv)
            cuts.update({s, -s})
    pts = sorted(c for c in cuts if lo <= c <= hi)
    total = 0.0
    for x1, x2 in zip(pts[:-1], pts[1:]):
        if x2 <= x1:
            continue
        xm = 0.5 * (x1 + x2)
        c = np.sqrt(max(r * r - xm * xm, 0.0))
        top_is_curve = c < yb
        bot_is_curve = -c > ya
        if min(yb, c) - max(ya, -c) <= 0:
            continue
        seg = 0.0
        seg += _seg_area_under(x1, x2, r) if top_is_curve else yb * (x2 - x1)
        seg -= -_seg_area_under(x1, x2, r) if bot_is_curve else ya * (x2 - x1)
        total += seg
    return total


def ball_dirichlet_integral(grid: Grid, f, x0: tuple[float, float], r: float) -> float:
    """Dirichlet energy of ``f`` inside the ball ``B(x0, r)``.

    Each cell's gradient energy is weighted by the exact fraction of its area
    lying in the ball, so the result is exact for cellwise-constant gradients.
    """
    if r <= 0:
        raise DomainError(f"ball radius must be positive, got {r}")
    if not grid.contains_ball(x0, r):
        raise DomainError(f"ball B({x0}, {r}) leaves the domain")
    dens = gradient_energy_density(grid, f)
    h = grid.h
    xs = grid.origin[0] + h * np.arange(grid.nx - 1)
    ys = grid.origin[1] + h * np.arange(grid.ny - 1)
    i0 = max(int(np.floor((x0[0] - r - grid.origin[0]) / h)) - 1, 0)
    i1 = min(int(np.ceil((x0[0] + r - grid.origin[0]) / h)) + 1, grid.nx - 1)
    j0 = max(int(np.floor((x0[1] - r - grid.origin[1]) / h)) - 1, 0)
    j1 = min(int(np.ceil((x0[1] + r - grid.origin[1]) / h)) + 1, grid.ny - 1)
    total = 0.0
    cell_area = h * h
    for j in range(j0, j1):
        ya, yb = ys[j] - x0[1], ys[j] + h - x0[1]
        for i in range(i0, i1):
            if dens[j, i] == 0.0:
                continue
            xa, xb = xs[i] - x0[0], xs[i] + h - x0[0]
            far = max(xa * xa, xb * xb) + max(ya * ya, yb * yb)
            if far <= r * r:
                frac = 1.0
            else:
                near_x = 0.0 if xa <= 0 <= xb else min(abs(xa), abs(xb))
                near_y = 0.0 if ya <= 0 <= yb else min(abs(ya), abs(yb))
                if near_x * near_x + near_y * near_y >= r * r:
                    continue
                frac = disk_rectangle_area(xa, xb, ya, yb, r) / cell_area
            total += frac * dens[j, i]
    return float(total)


def laplace_matrix(grid: Grid, shift=None) -> sparse.csc_matrix:
    """Matrix of ``-h^2 * Delta_h + shift * h^2`` acting on interior unknowns."""
    idx = grid.interior_index
    n = int(grid.interior.sum())
    rows, cols, vals = [], [], []
    jj, ii = np.nonzero(grid.interior)
    me = idx[jj, ii]
    diag = np.full(n, 4.0)
    if shift is not None:
        diag = diag + np.broadcast_to(np.asarray(shift, dtype=float), grid.shape)[jj, ii] * grid.h**2
    rows.append(me)
    cols.append(me)
    vals.append(diag)
    for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        nb = idx[jj + dj, ii + di]
        ok = nb >= 0
        rows.append(me[ok])
        cols.append(nb[ok])
        vals.append(-np.ones(ok.sum()))
    A = sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return A


def dirichlet_rhs(grid: Grid, boundary_values: np.ndarray, rhs=None) -> np.ndarray:
    """Right side for :func:`laplace_matrix`: ``h^2 * rhs`` plus boundary couplings."""
    jj, ii = np.nonzero(grid.interior)
    g = np.where(grid.interior, 0.0, boundary_values)
    g = np.where(grid.inside, g, 0.0)
    b = g[jj, ii + 1] + g[jj, ii - 1] + g[jj + 1, ii] + g[jj - 1, ii]
    if rhs is not None:
        b = b + grid.h**2 * np.broadcast_to(np.asarray(rhs, dtype=float), grid.shape)[jj, ii]
    return b


def dirichlet_solve(grid: Grid, boundary_values, rhs=None, shift=None, solver=None) -> np.ndarray:
    """Solve ``-Delta_h u + shift * u = rhs`` at interior nodes, ``u = boundary_values`` elsewhere.

    ``solver`` may be a prefactorized callable for the matching matrix.
    """
    bv = check_field(grid, boundary_values, "boundary_values")
    if solver is None:
        solver = splinalg.factorized(laplace_matrix(grid, shift))
    sol = solver(dirichlet_rhs(grid, bv, rhs))
    out = np.where(grid.inside, bv, 0.0).astype(float)
    out[grid.interior] = sol
    return out
