"""Free-boundary geometry of 2D segregated states.

Interfaces between densities ``i`` and ``j`` are zero level lines of
``u_i - u_j`` (equivalently of ``u^_i`` where only ``i`` and ``j`` are
present), traced with marching squares restricted to cells whose
neighbourhood holds no third density.  Multiple points are where such
polylines stop inside the domain and three or more densities meet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize
from skimage import measure

from .errors import DomainError
from .grid import Grid
from .segregation import State

__all__ = [
    "Interface",
    "MultiplePoint",
    "NodalReport",
    "extract_interfaces",
    "locate_multiple_points",
    "JunctionReport",
    "junction_analysis",
    "AdjacencyGraph",
    "adjacency_graph",
    "support_connectedness",
    "sample_circle",
    "label_map",
]

_FOUR = ndimage.generate_binary_structure(2, 1)


def _state(sol) -> State:
    return sol.state if hasattr(sol, "state") else sol


@dataclass
class Interface:
    """Polyline ``points`` (``(n, 2)`` array of ``x, y``) separating ``labels``."""

    labels: tuple
    points: np.ndarray

    @property
    def closed(self) -> bool:
        return len(self.points) > 2 and np.allclose(self.points[0], self.points[-1])

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.points, axis=0).T)))


@dataclass
class MultiplePoint:
    location: tuple
    multiplicity: int
    labels: tuple
    sector_angles: list = field(default_factory=list)
    exponent: float | None = None
    theta0: float | None = None
    gradient_decay: list = field(default_factory=list)


@dataclass
class NodalReport:
    interfaces: list
    zero_regions: list
    multiple_points: list = field(default_factory=list)
    active: tuple = ()
    support_components: dict = field(default_factory=dict)
    tol: float = 0.0
    grid: Grid | None = field(default=None, repr=False)

    def pairs(self) -> set:
        return {iface.labels for iface in self.interfaces}


def label_map(s: State, tol: float = 0.0) -> np.ndarray:
    """Density index above ``tol`` at each node (largest wins), ``-1`` if none, ``-2`` outside."""
    lab = np.argmax(s.u, axis=0)
    lab = np.where(s.u.max(axis=0) > tol, lab, -1)
    return np.where(s.grid.inside, lab, -2)


def _default_tol(s: State) -> float:
    return 1e-8 * max(1.0, float(np.max(s.u)) if s.u.size else 1.0)


def _to_xy(g: Grid, contour: np.ndarray) -> np.ndarray:
    return np.column_stack((g.origin[0] + g.h * contour[:, 1], g.origin[1] + g.h * contour[:, 0]))


def extract_interfaces(sol, tol: float | None = None) -> NodalReport:
    """Interfaces between pairs of densities and the regions where all vanish.

    A node takes part in the ``(i, j)`` contour when it is interior, not in
    a zero region, and its 3x3 neighbourhood holds no density other than
    ``i`` and ``j`` above ``tol``.  Zero regions are 4-connected sets of
    interior nodes where the node and its four neighbours are all below
    ``tol``; each is returned as an ``(n, 2)`` array of ``(j, i)`` indices.
    """
    s = _state(sol)
    g = s.grid
    tol = _default_tol(s) if tol is None else float(tol)
    above = (s.u > tol) & g.inside[None]
    any_above = above.any(axis=0)
    quiet = ~ndimage.binary_dilation(any_above, structure=_FOUR)
    zero_nodes = quiet & g.interior
    zlab, nz = ndimage.label(zero_nodes, structure=_FOUR)
    zero_regions = [np.argwhere(zlab == r + 1) for r in range(nz)]
    near = np.stack([ndimage.binary_dilation(above[i], structure=np.ones((3, 3), bool)) for i in range(s.k)])
    usable = g.interior & ~zero_nodes
    interfaces = []
    for i in range(s.k):
        if not above[i].any():
            continue
        for j in range(i + 1, s.k):
            if not above[j].any():
                continue
            others = np.zeros(g.shape, bool)
            for l in range(s.k):
                if l not in (i, j):
                    others |= near[l]
            mask = usable & ~others & (near[i] | near[j])
            if mask.sum() < 4:
                continue
            diff = s.u[i] - s.u[j]
            for c in measure.find_contours(diff, 0.0, mask=mask):
                if len(c) < 2:
                    continue
                interfaces.append(Interface((i, j), _to_xy(g, c)))
    active = tuple(i for i in range(s.k) if above[i].any())
    comps = {i: support_connectedness(s, i, tol) for i in active}
    return NodalReport(interfaces, zero_regions, [], active, comps, tol, g)


def _labels_near(s: State, point, radius: float, tol: float) -> tuple:
    g = s.grid
    d = np.hypot(g.x - point[0], g.y - point[1])
    ball = (d <= radius) & g.inside
    return tuple(i for i in range(s.k) if np.any(s.u[i][ball] > tol))


def locate_multiple_points(report: NodalReport, sol, radius: float | None = None,
                           count_radius: float | None = None) -> list:
    """Cluster interior polyline endpoints and keep clusters where three or more densities meet.

    Endpoints closer than ``radius`` (default ``8h``) are linked; each
    cluster's centroid is the location and its multiplicity is the number
    of densities above the report tolerance within ``count_radius``
    (default ``3h``).  Endpoints within ``2h`` of the domain boundary are
    ignored since polylines are cut there.
    """
    s = _state(sol)
    g = s.grid
    radius = 8.0 * g.h if radius is None else float(radius)
    count_radius = 3.0 * g.h if count_radius is None else float(count_radius)
    dist = g.distance_to_boundary()
    ends = []
    for iface in report.interfaces:
        if iface.closed:
            continue
        for pt in (iface.points[0], iface.points[-1]):
            jn, inn = g.nearest_node(pt)
            if dist[jn, inn] > 2.5 * g.h:
                ends.append(pt)
    if not ends:
        return []
    ends = np.array(ends)
    n = len(ends)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    dd = np.hypot(ends[:, None, 0] - ends[None, :, 0], ends[:, None, 1] - ends[None, :, 1])
    for a in range(n):
        for b in range(a + 1, n):
            if dd[a, b] <= radius:
                parent[find(a)] = find(b)
    clusters = {}
    for a in range(n):
        clusters.setdefault(find(a), []).append(a)
    out = []
    for members in clusters.values():
        loc = ends[members].mean(axis=0)
        labels = _labels_near(s, loc, count_radius, report.tol)
        if len(labels) >= 3:
            out.append(MultiplePoint((float(loc[0]), float(loc[1])), len(labels), labels))
    out.sort(key=lambda m: (m.location[1], m.location[0]))
    report.multiple_points = out
    return out


# --------------------------------------------------------------------------
# junction asymptotics
# --------------------------------------------------------------------------


def sample_circle(g: Grid, f: np.ndarray, x0, r: float, theta: np.ndarray) -> np.ndarray:
    """Bilinear samples of node field(s) ``f`` at ``x0 + r (cos t, sin t)``."""
    cols = (x0[0] + r * np.cos(theta) - g.origin[0]) / g.h
    rows = (x0[1] + r * np.sin(theta) - g.origin[1]) / g.h
    if f.ndim == 2:
        return ndimage.map_coordinates(f, [rows, cols], order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(fi, [rows, cols], order=1, mode="nearest") for fi in f])


@dataclass
class JunctionReport:
    center: tuple
    multiplicity: int
    sector_angles: list  # (density, angle) per arc, in circle order
    angle_sum: float
    exponent: float
    theta0: float
    gradient_decay: list  # (r, max |grad U| on the annulus r/2 < |x - x0| <= r)
    radii: list
    circle_means: list

    def density_angles(self) -> dict:
        out = {}
        for lab, ang in self.sector_angles:
            out[lab] = out.get(lab, 0.0) + ang
        return out

    @property
    def decay_factors(self) -> list:
        g = [v for _, v in self.gradient_decay]
        return [g[j] / g[j + 1] if g[j + 1] > 0 else np.inf for j in range(len(g) - 1)]


def _sectors(s: State, x0, r: float, n: int = 4096):
    g = s.grid
    theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    vals = sample_circle(g, s.u, x0, r, theta)
    lab = np.where(vals.max(axis=0) > 0, np.argmax(vals, axis=0), -1)
    change = np.nonzero(lab != np.roll(lab, -1))[0]
    if change.size == 0:
        return [(int(lab[0]), 2 * np.pi)]
    cuts = []
    for c in change:
        a, b = lab[c], lab[(c + 1) % n]
        t0 = theta[c]
        t1 = t0 + 2 * np.pi / n

        def gap(t):
            v = sample_circle(g, s.u, x0, r, np.array([t]))[:, 0]
            va = v[a] if a >= 0 else 0.0
            vb = v[b] if b >= 0 else 0.0
            return va - vb

        ga, gb = gap(t0), gap(t1)
        if ga * gb < 0:
            t = optimize.brentq(gap, t0, t1, xtol=1e-14)
        else:
            t = 0.5 * (t0 + t1)
        cuts.append((t, int(b)))
    arcs = []
    m = len(cuts)
    for q in range(m):
        t_start, lab_q = cuts[q]
        t_end = cuts[(q + 1) % m][0]
        if q == m - 1:
            t_end += 2 * np.pi
        arcs.append((lab_q, t_end - t_start))
    return arcs


def _cell_gradient(g: Grid, f: np.ndarray) -> np.ndarray:
    gx = 0.5 * ((f[:-1, 1:] - f[:-1, :-1]) + (f[1:, 1:] - f[1:, :-1])) / g.h
    gy = 0.5 * ((f[1:, :-1] - f[:-1, :-1]) + (f[1:, 1:] - f[:-1, 1:])) / g.h
    return np.where(g.cell_valid, np.hypot(gx, gy), 0.0)


def junction_analysis(sol, x0, h: int, radii=None, decay_radii=None) -> JunctionReport:
    """Sector angles, radial exponent, phase and gradient decay around a multiple point.

    * sector angles: arcs of the circle of the largest radius on which one
      density dominates, with transitions located to machine precision;
    * exponent: least-squares slope of ``log mean_circle U`` against ``log r``;
    * ``theta0``: maximizer of the correlation between the angular profile
      and ``|cos(h/2 (theta + theta0))|``, reported in ``[-pi/h, pi/h)``;
    * gradient decay: ``max |grad U|`` over cells in ``r/2 < |x - x0| <= r``.
    """
    s = _state(sol)
    g = s.grid
    if h < 3:
        raise ValueError(f"junction analysis needs multiplicity >= 3, got {h}")
    x0 = (float(x0[0]), float(x0[1]))
    jn, inn = g.nearest_node(x0)
    room = float(g.distance_to_boundary()[jn, inn]) - g.h
    if radii is None:
        radii = np.geomspace(4 * g.h, 0.5 * room, 8)
    radii = sorted(float(r) for r in radii)
    if decay_radii is None:
        decay_radii = [r for r in (64 * g.h, 32 * g.h, 16 * g.h, 8 * g.h) if r <= room]
    decay_radii = sorted((float(r) for r in decay_radii), reverse=True)
    for r in list(radii) + list(decay_radii):
        if not g.contains_ball(x0, r + g.h):
            raise DomainError(f"circle of radius {r} around {x0} leaves the domain")
    U = s.total()
    theta = np.linspace(0.0, 2 * np.pi, 2048, endpoint=False)
    means = [float(sample_circle(g, U, x0, r, theta).mean()) for r in radii]
    if min(means) <= 0:
        raise DomainError("U vanishes on a sampling circle; cannot fit an exponent")
    slope = float(np.polyfit(np.log(radii), np.log(means), 1)[0])

    arcs = _sectors(s, x0, radii[-1])
    angle_sum = float(sum(a for _, a in arcs))

    prof = sample_circle(g, U, x0, radii[-1], theta)
    prof = prof / np.linalg.norm(prof)
    period = 2 * np.pi / h

    def neg_corr(t0):
        model = np.abs(np.cos(0.5 * h * (theta + t0)))
        return -float(prof @ model) / np.linalg.norm(model)

    grid_t = np.linspace(0.0, period, 721, endpoint=False)
    best = grid_t[int(np.argmin([neg_corr(t) for t in grid_t]))]
    step = period / 721
    res = optimize.minimize_scalar(neg_corr, bounds=(best - step, best + step), method="bounded",
                                   options={"xatol": 1e-10})
    theta0 = float(np.mod(res.x + 0.5 * period, period) - 0.5 * period)

    grad = _cell_gradient(g, U)
    cx = g.origin[0] + g.h * (np.arange(g.nx - 1) + 0.5)
    cy = g.origin[1] + g.h * (np.arange(g.ny - 1) + 0.5)
    dist = np.hypot(cx[None, :] - x0[0], cy[:, None] - x0[1])
    decay = []
    for r in decay_radii:
        ring = (dist > 0.5 * r) & (dist <= r)
        decay.append((r, float(grad[ring].max()) if ring.any() else 0.0))
    return JunctionReport(x0, h, arcs, angle_sum, slope, theta0, decay, radii, means)


# --------------------------------------------------------------------------
# graph and connectivity
# --------------------------------------------------------------------------


@dataclass
class AdjacencyGraph:
    vertices: tuple
    edges: dict  # (i, j) -> list of Interface
    components: dict  # density -> number of support components

    def degree(self, i: int) -> int:
        return sum(1 for e in self.edges if i in e)

    def edge_set(self) -> set:
        return set(self.edges)


def adjacency_graph(report: NodalReport) -> AdjacencyGraph:
    """Densities with nonempty support, joined when an interface separates them."""
    edges = {}
    for iface in report.interfaces:
        edges.setdefault(tuple(sorted(iface.labels)), []).append(iface)
    return AdjacencyGraph(tuple(report.active), edges, dict(report.support_components))


def support_connectedness(sol, i: int, tol: float = 0.0) -> int:
    """Number of 4-connected components of ``{u_i > tol}``."""
    s = _state(sol)
    if not 0 <= i < s.k:
        raise IndexError(f"density index {i} out of range for k={s.k}")
    _, n = ndimage.label((s.u[i] > tol) & s.grid.inside, structure=_FOUR)
    return int(n)
