"""Checks run on computed states: extremality, barriers, monotonicity, Lipschitz bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import linalg as splinalg

from .errors import (
    A2ViolationError,
    BarrierDivergenceError,
    ConfigurationError,
    DomainError,
    GridMismatchError,
)
from .grid import ball_dirichlet_integral, dirichlet_solve, laplace_matrix, laplacian5
from .problem import Problem, check_A2
from .segregation import State, hat, multiplicity_map

__all__ = [
    "EXTREMALITY_C",
    "ExtremalityReport",
    "extremality_residuals",
    "hat_reaction",
    "MonotonicityTrace",
    "acf_product",
    "LipschitzReport",
    "lipschitz_report",
    "lipschitz_refinement",
    "BarrierPair",
    "compute_barriers",
]

#: constant in the residual tolerance ``tol(h) = C h``; fixed on the two-phase oracle
EXTREMALITY_C = 1.0

_EPS = np.finfo(float).eps


def _state(sol) -> State:
    return sol.state if hasattr(sol, "state") else sol


def _require_unit(p: Problem):
    if not p.unit_diffusion:
        raise ConfigurationError("this check needs unit diffusions; rescale the problem first")


def _check(s: State, p: Problem):
    if s.grid.shape != p.grid.shape or s.k != p.k:
        raise GridMismatchError("state does not match the problem")


def hat_reaction(s: State, p: Problem, i: int) -> np.ndarray:
    """``f^(u^_i)``: ``f_i(u_i)`` on the support of ``u_i``, ``-f_j(u_j)`` on that of ``u_j``, 0 elsewhere."""
    out = np.zeros(p.grid.shape)
    for j in range(p.k):
        fj = p.reactions[j].f(s.u[j])
        on = s.u[j] > 0
        out = np.where(on, fj if j == i else -fj, out)
    return out


# --------------------------------------------------------------------------
# extremality
# --------------------------------------------------------------------------


@dataclass
class ExtremalityReport:
    """Per-density suprema of the two extremality residuals.

    ``sub[i]`` is ``sup (-Delta_h u_i - f_i(u_i))^+`` and ``hat[i]`` is
    ``sup (f^(u^_i) + Delta_h u^_i)^+`` over interior nodes, after removing
    the rounding floor ``noise_floor``.  ``*_away`` restrict the supremum
    to nodes farther than ``2h`` from a second density.
    """

    h: float
    sub: list
    hat: list
    sub_node: list
    hat_node: list
    sub_away: list
    hat_away: list
    noise_floor: float
    C: float = EXTREMALITY_C
    sub_field: np.ndarray | None = field(default=None, repr=False)
    hat_field: np.ndarray | None = field(default=None, repr=False)

    @property
    def tol(self) -> float:
        return self.C * self.h

    @property
    def max_sub(self) -> float:
        return max(self.sub)

    @property
    def max_hat(self) -> float:
        return max(self.hat)

    @property
    def max_residual(self) -> float:
        return max(self.max_sub, self.max_hat)

    @property
    def ok(self) -> bool:
        return self.max_residual <= self.tol


def extremality_residuals(sol, p: Problem, C: float = EXTREMALITY_C) -> ExtremalityReport:
    """Node-wise discrete extremality inequalities at interior nodes.

    Both residuals are nonnegative.  A floating-point floor
    ``64 eps (max(1, max U) / h^2 + max |f|)`` is subtracted so that an exact
    discrete minimizer reports 0 regardless of the grid size.
    """
    s = _state(sol)
    _check(s, p)
    _require_unit(p)
    g = p.grid
    inner = g.interior
    band = multiplicity_map(s, 2.0 * g.h, 0.0).m >= 2
    Umax = float(np.max(np.abs(s.u))) if s.u.size else 0.0
    fmax = 0.0
    for i in range(p.k):
        fmax = max(fmax, float(np.max(np.abs(p.reactions[i].f(s.u[i])))))
    floor = 64.0 * _EPS * (max(1.0, Umax) / g.h**2 + fmax)
    subs, hats, subn, hatn, suba, hata = [], [], [], [], [], []
    subf = np.zeros((p.k,) + g.shape)
    hatf = np.zeros((p.k,) + g.shape)
    for i in range(p.k):
        r1 = -laplacian5(g, s.u[i]) - p.reactions[i].f(s.u[i])
        uh = hat(s, i)
        r2 = hat_reaction(s, p, i) + laplacian5(g, uh)
        for raw, store, sups, nodes, away in ((r1, subf, subs, subn, suba), (r2, hatf, hats, hatn, hata)):
            val = np.where(inner, np.maximum(np.nan_to_num(raw, nan=0.0) - floor, 0.0), 0.0)
            store[i] = val
            j, ii = np.unravel_index(int(np.argmax(val)), val.shape)
            sups.append(float(val[j, ii]))
            nodes.append((int(j), int(ii)))
            away.append(float(np.max(np.where(band, 0.0, val))))
    return ExtremalityReport(g.h, subs, hats, subn, hatn, suba, hata, floor, C, subf, hatf)


# --------------------------------------------------------------------------
# monotonicity
# --------------------------------------------------------------------------


@dataclass
class MonotonicityTrace:
    center: tuple
    radii: list
    values: list
    phases: list
    factors: list
    scale: float
    eps_mono: float
    max_violation: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def acf_product(sol, x0, radii, phases=None, eps_mono: float = 1e-6, normalize: bool = True) -> MonotonicityTrace:
    """``Phi(r) = prod_phases r^(-m) int_{B(x0, r)} |grad w|^2`` with ``m`` the number of phases.

    ``phases`` is a list of index groups; each ``w`` is the sum of the
    densities in its group (default: one phase per density).  With
    ``normalize`` the fields are divided by ``max(1, M)``, ``M`` the largest
    interior value of ``(-Delta_h w)^+``.  A violation is a step with
    ``Phi(r_{j+1}) < Phi(r_j) - eps_mono * max Phi``.
    """
    s = _state(sol)
    g = s.grid
    phases = [[i] for i in range(s.k)] if phases is None else [list(ph) for ph in phases]
    for ph in phases:
        for i in ph:
            if not 0 <= i < s.k:
                raise IndexError(f"phase index {i} out of range for k={s.k}")
    radii = sorted(float(r) for r in radii)
    x0 = (float(x0[0]), float(x0[1]))
    for r in radii:
        if not g.contains_ball(x0, r):
            raise DomainError(f"ball B({x0}, {r}) leaves the domain")
    ws = [s.u[ph].sum(axis=0) for ph in phases]
    scale = 1.0
    if normalize:
        M = 0.0
        for w in ws:
            lap = laplacian5(g, w)
            M = max(M, float(np.max(np.where(g.interior, np.nan_to_num(-lap, nan=0.0), 0.0))))
        scale = max(1.0, M)
    m = len(phases)
    values, factors = [], []
    for r in radii:
        fac = [ball_dirichlet_integral(g, w / scale, x0, r) / r**m for w in ws]
        factors.append(fac)
        values.append(float(np.prod(fac)))
    vmax = max(values) if values else 0.0
    viol = []
    worst = 0.0
    for j in range(len(values) - 1):
        drop = values[j] - values[j + 1]
        worst = max(worst, drop)
        if drop > eps_mono * vmax:
            viol.append((radii[j], radii[j + 1], drop))
    return MonotonicityTrace(x0, radii, values, phases, factors, scale, eps_mono, worst, viol)


# --------------------------------------------------------------------------
# Lipschitz
# --------------------------------------------------------------------------


@dataclass
class LipschitzReport:
    L_max: float
    per_density: list
    delta: float
    h: float
    argmax: tuple | None = None


def lipschitz_report(sol, delta: float) -> LipschitzReport:
    """Largest neighbour difference quotient of ``U = sum u_i`` in the ``delta``-interior."""
    s = _state(sol)
    g = s.grid
    if delta < 2.0 * g.h * (1 - 1e-12):
        raise ConfigurationError(f"margin delta={delta} is below 2h")
    sub = g.inside & (g.distance_to_boundary() >= delta - 1e-12 * g.h)
    if not sub.any():
        raise DomainError(f"no nodes at distance >= {delta} from the boundary")

    def quot(f):
        best, where = 0.0, None
        for ax in (0, 1):
            a = [slice(None), slice(None)]
            b = [slice(None), slice(None)]
            a[ax] = slice(None, -1)
            b[ax] = slice(1, None)
            ok = sub[tuple(a)] & sub[tuple(b)]
            dq = np.where(ok, np.abs(f[tuple(b)] - f[tuple(a)]), 0.0) / g.h
            if dq.size and dq.max() > best:
                best = float(dq.max())
                where = np.unravel_index(int(np.argmax(dq)), dq.shape)
        return best, where

    L, where = quot(s.total())
    per = [quot(s.u[i])[0] for i in range(s.k)]
    return LipschitzReport(L, per, float(delta), g.h, tuple(int(v) for v in where) if where else None)


def lipschitz_refinement(solve_on, sizes=(65, 129, 257), delta: float = 0.1):
    """Table ``[(n, h, L_max)]`` from ``solve_on(n)`` returning a Solution per grid size."""
    rows = []
    for n in sizes:
        sol = solve_on(n)
        rep = lipschitz_report(sol, delta)
        rows.append((n, rep.h, rep.L_max))
    return rows


# --------------------------------------------------------------------------
# barriers
# --------------------------------------------------------------------------


@dataclass
class BarrierPair:
    upper: np.ndarray
    lower: np.ndarray
    upper_violation: list
    lower_violation: list
    tol: float
    picard_iters: list
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_violation(self) -> float:
        return max(self.upper_violation + self.lower_violation + [0.0])


def _upper_barrier(p: Problem, i: int, max_iter: int = 500, damping: float = 0.5, tol: float = 1e-12):
    g = p.grid
    r = p.reactions[i]
    phi = np.array(p.boundary.values[i])
    # shift so the fixed-point map is monotone
    probe = np.linspace(0.0, max(1.0, 2.0 * float(phi.max())), 64)
    K = max(0.0, -float(np.min(r.df(probe[:, None, None] * np.ones((1,) + g.shape)))))
    solver = splinalg.factorized(laplace_matrix(g, K))
    x = dirichlet_solve(g, phi, solver=solver)
    if np.all(np.asarray(r.growth_bound) == 0):
        return x, 0
    scale = max(1.0, float(np.max(np.abs(x))))
    for it in range(1, max_iter + 1):
        rhs = r.f(x) + K * x
        new = dirichlet_solve(g, phi, rhs=rhs, solver=solver)
        nxt = (1.0 - damping) * x + damping * new
        if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > 1e8 * scale:
            raise BarrierDivergenceError(i, f"iterate blew up at step {it}")
        step = float(np.max(np.abs(nxt - x)))
        x = nxt
        if step <= tol * max(1.0, float(np.max(np.abs(x)))):
            return x, it
    raise BarrierDivergenceError(i, f"no convergence in {max_iter} iterations")


def compute_barriers(p: Problem, sol, tol: float | None = None, max_iter: int = 500) -> BarrierPair:
    """Upper barriers ``-Delta Phi_i = f_i(Phi_i)`` and lower barriers ``-Delta Psi_i = f^(u^_i)``.

    ``Phi_i`` takes the trace ``phi_i``, ``Psi_i`` the trace of ``u^_i``.
    Violations of ``Psi_i^+ <= u_i <= Phi_i`` beyond ``tol`` (default the
    problem's ``residual_tol``) are listed as ``(kind, density, node, amount)``.
    """
    s = _state(sol)
    _check(s, p)
    _require_unit(p)
    tol = p.residual_tol if tol is None else tol
    g = p.grid
    for i in range(p.k):
        rep = check_A2(p, i)
        if not rep.holds:
            raise A2ViolationError(i, rep.min_eigenvalue)
    lap_solver = splinalg.factorized(laplace_matrix(g))
    upper = np.zeros((p.k,) + g.shape)
    lower = np.zeros((p.k,) + g.shape)
    up_v, lo_v, iters, viol = [], [], [], []
    for i in range(p.k):
        upper[i], its = _upper_barrier(p, i, max_iter=max_iter)
        iters.append(its)
        uh = hat(s, i)
        lower[i] = dirichlet_solve(g, uh, rhs=hat_reaction(s, p, i), solver=lap_solver)
        ui = s.u[i]
        du = np.where(g.inside, ui - upper[i], -np.inf)
        dl = np.where(g.inside, np.maximum(lower[i], 0.0) - ui, -np.inf)
        up_v.append(max(0.0, float(du.max())))
        lo_v.append(max(0.0, float(dl.max())))
        for kind, d in (("upper", du), ("lower", dl)):
            if d.max() > tol:
                j, ii = np.unravel_index(int(np.argmax(d)), d.shape)
                viol.append((kind, i, (int(j), int(ii)), float(d[j, ii])))
    return BarrierPair(upper, lower, up_v, lo_v, tol, iters, viol)
