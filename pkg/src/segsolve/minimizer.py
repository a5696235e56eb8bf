"""Discrete energy of segregated states and its minimization.

Energy
------
For a state ``U`` with hats ``H_i = u_i - sum_{j != i} u_j`` the discrete
energy is::

    J(U) = sum_i 1/2 sum_edges w_i(e) g(H_i(p), H_i(q)) - sum_i sum_p c_p F_i(u_i(p))

where ``g(a, b)`` is the squared increment of the positive part of the
linear interpolant along the edge (:func:`segsolve.grid.cut_edge_energy`),
``w_i(e)`` the edge weight built from ``d_i^2`` and ``c_p`` the node
quadrature weight.  On a segregated state an edge inside one support costs
``(a - b)^2``, an edge joining two different supports costs ``(a + b)^2``;
for two densities the Dirichlet part is exactly that of ``u_1 - u_2``.

Solvers
-------
``projected_gradient``
    Clamp, project onto segregated states, backtrack.
``active_set`` (default)
    Alternates exact solves with the support labels frozen and red-black
    node relaxation over all labels; needs equal diffusions.  Every
    accepted iterate lowers the energy.
"""

from __future__ import annotations

import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import A2ViolationError, ConfigurationError, GridMismatchError, InadmissibleDataError
from .grid import (
    cut_edge_energy,
    cut_edge_energy_partials,
    dirichlet_solve,
    gradient_energy_density,
    integrate,
)
from .problem import BoundaryData, Problem, check_A2, validate_admissible
from .segregation import State, hat_all, is_segregated, project_segregated

log = logging.getLogger(__name__)

__all__ = [
    "SolveOptions",
    "Solution",
    "StepResult",
    "energy",
    "energy_gradient",
    "descent_step",
    "initial_state",
    "solve",
    "multi_start",
    "MultiStartReport",
    "perturbation_study",
    "PerturbationRow",
    "state_distance",
    "h1_distance",
]

INITS = ("zero_interior", "harmonic_blend", "random")
METHODS = ("active_set", "projected_gradient")


@dataclass(frozen=True)
class SolveOptions:
    tau: float = 0.25
    max_iters: int = 2000
    energy_tol: float = 1e-10
    rng_seed: int = 0
    init: str = "harmonic_blend"
    method: str = "active_set"
    sweeps: int = 4
    window: int = 10

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not self.energy_tol >= 0:
            raise ConfigurationError(f"energy_tol must be >= 0, got {self.energy_tol}")
        if self.init not in INITS:
            raise ConfigurationError(f"init must be one of {INITS}, got {self.init!r}")
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.sweeps < 0 or self.window < 1:
            raise ConfigurationError("sweeps must be >= 0 and window >= 1")


@dataclass
class Solution:
    state: State
    energy_trace: list
    iters: int
    converged: bool
    final_gradient_norm: float
    method: str = "active_set"

    @property
    def energy(self) -> float:
        return self.energy_trace[-1]


@dataclass
class StepResult:
    state: State
    accepted: bool
    tau: float
    energy: float


# --------------------------------------------------------------------------
# discretization data
# --------------------------------------------------------------------------


class _Disc:
    """Edge weights, quadrature weights and boundary values of a problem."""

    def __init__(self, p: Problem):
        g = p.grid
        self.grid = g
        self.c = g.node_weights
        self.wh = []
        self.wv = []
        for i in range(p.k):
            d = p.diffusion_field(i)
            d2 = d * d
            d2c = 0.25 * (d2[:-1, :-1] + d2[:-1, 1:] + d2[1:, :-1] + d2[1:, 1:])
            d2c = np.where(g.cell_valid, d2c, 0.0)
            wh = np.zeros((g.ny, g.nx - 1))
            wh[:-1] += 0.5 * d2c
            wh[1:] += 0.5 * d2c
            wv = np.zeros((g.ny - 1, g.nx))
            wv[:, :-1] += 0.5 * d2c
            wv[:, 1:] += 0.5 * d2c
            self.wh.append(wh)
            self.wv.append(wv)
        self.phi = np.array(p.boundary.values)


@functools.lru_cache(maxsize=32)
def _disc(p: Problem) -> _Disc:
    return _Disc(p)


def _check_state(s: State, p: Problem):
    if s.grid.shape != p.grid.shape:
        raise GridMismatchError(f"state grid {s.grid.shape} differs from problem grid {p.grid.shape}")
    if s.k != p.k:
        raise GridMismatchError(f"state has {s.k} densities, problem has {p.k}")


def _nbsum(wh, wv, x):
    """Weighted sum of the four lattice neighbours of every node."""
    out = np.zeros_like(x)
    out[:, :-1] += wh * x[:, 1:]
    out[:, 1:] += wh * x[:, :-1]
    out[:-1, :] += wv * x[1:, :]
    out[1:, :] += wv * x[:-1, :]
    return out


def _wsum(wh, wv, shape):
    out = np.zeros(shape)
    out[:, :-1] += wh
    out[:, 1:] += wh
    out[:-1, :] += wv
    out[1:, :] += wv
    return out


# --------------------------------------------------------------------------
# energy and gradient
# --------------------------------------------------------------------------


def _dirichlet_part(D: _Disc, u: np.ndarray) -> float:
    H = hat_all(u)
    total = 0.0
    for i in range(u.shape[0]):
        Hi = H[i]
        total += np.sum(D.wh[i] * cut_edge_energy(Hi[:, :-1], Hi[:, 1:]))
        total += np.sum(D.wv[i] * cut_edge_energy(Hi[:-1, :], Hi[1:, :]))
    return 0.5 * float(total)


def _potential_part(p: Problem, D: _Disc, u: np.ndarray) -> float:
    total = 0.0
    for i, r in enumerate(p.reactions):
        total += np.sum(D.c * r.F(u[i]))
    return float(total)


def energy(s: State, p: Problem) -> float:
    """Discrete energy ``J(U)``; see the module docstring."""
    _check_state(s, p)
    D = _disc(p)
    return _dirichlet_part(D, s.u) - _potential_part(p, D, s.u)


def energy_gradient(s: State, p: Problem) -> np.ndarray:
    """Exact gradient of :func:`energy` with respect to interior node values.

    Shape ``(k, ny, nx)``; zero at boundary and masked-out nodes.  Where an
    edge endpoint's hat is exactly 0 the two one-sided derivatives are
    averaged.  Every ``u_j`` enters every hat, so a component that vanishes
    identically still has a nonzero gradient wherever the others are not
    at rest.
    """
    _check_state(s, p)
    D = _disc(p)
    u = s.u
    H = hat_all(u)
    G = np.zeros_like(u)
    for i in range(p.k):
        Hi = H[i]
        da, db = cut_edge_energy_partials(Hi[:, :-1], Hi[:, 1:])
        G[i][:, :-1] += 0.5 * D.wh[i] * da
        G[i][:, 1:] += 0.5 * D.wh[i] * db
        da, db = cut_edge_energy_partials(Hi[:-1, :], Hi[1:, :])
        G[i][:-1, :] += 0.5 * D.wv[i] * da
        G[i][1:, :] += 0.5 * D.wv[i] * db
    grad = 2.0 * G - G.sum(axis=0, keepdims=True)
    for j, r in enumerate(p.reactions):
        grad[j] -= D.c * r.f(u[j])
    grad[:, ~p.grid.interior] = 0.0
    return grad


def _projected_gradient_norm(s: State, p: Problem) -> float:
    g = energy_gradient(s, p)
    pg = np.where(s.u > 0, g, np.minimum(g, 0.0))
    return float(np.sqrt(np.sum(pg[:, p.grid.interior] ** 2)))


# --------------------------------------------------------------------------
# projected gradient
# --------------------------------------------------------------------------


def descent_step(s: State, p: Problem, tau: float, max_halvings: int = 20,
                 e0: float | None = None) -> StepResult:
    """One projected-gradient step with backtracking.

    The candidate is ``project_segregated(max(0, u - tau * grad))`` with
    boundary nodes re-pinned.  ``tau`` is halved until the energy strictly
    decreases, at most ``max_halvings`` times.  A rejected step returns the
    input state, so the energy never increases.
    """
    _check_state(s, p)
    e0 = energy(s, p) if e0 is None else e0
    grad = energy_gradient(s, p)
    if not np.any(grad):
        return StepResult(s, False, tau, e0)
    phi = _disc(p).phi
    t = float(tau)
    for _ in range(max_halvings + 1):
        w = np.maximum(s.u - t * grad, 0.0)
        cand = project_segregated(w, p.grid, phi)
        e1 = energy(cand, p)
        if e1 < e0:
            return StepResult(cand, True, t, e1)
        t *= 0.5
    return StepResult(s, False, t, e0)


# --------------------------------------------------------------------------
# initial states
# --------------------------------------------------------------------------


def initial_state(p: Problem, init: str = "harmonic_blend", seed: int = 0) -> State:
    """Admissible segregated starting state with the boundary pinned."""
    g = p.grid
    phi = _disc(p).phi
    if init == "zero_interior":
        w = np.where(g.boundary[None], phi, 0.0)
    elif init == "harmonic_blend":
        w = np.stack([dirichlet_solve(g, phi[i]) for i in range(p.k)])
    elif init == "random":
        rng = np.random.default_rng(seed)
        scale = max(float(phi.max()), 1.0)
        w = scale * rng.random((p.k,) + g.shape)
    else:
        raise ConfigurationError(f"unknown init {init!r}")
    return project_segregated(w, g, phi)


# --------------------------------------------------------------------------
# active-set solver
# --------------------------------------------------------------------------


def _nodal(value, idx):
    return value[idx] if np.ndim(value) else value


def _scalar_min(r, W, S, c, idx):
    """Minimize ``1/2 W a^2 - S a - c F(a)`` over ``a >= 0`` node-wise.

    Returns ``(a, value)``.  Assumes ``W - c f'`` stays positive, which
    holds once ``h^2 Lip(f)`` is small against the stencil weight.
    """
    pos = S > 0
    a = np.zeros_like(S)
    if r.is_linear:
        slope = _nodal(r.slope, idx)
        den = W - c * slope
        a = np.where(pos & (den > 0), S / np.where(den > 0, den, 1.0), 0.0)
    elif np.any(pos):
        b = _nodal(r.growth_bound, idx)
        den = np.maximum(W - c * b, 1e-300)
        lo = np.zeros_like(S)
        hi = np.where(pos, S / den, 0.0)
        x = 0.5 * (lo + hi)
        for _ in range(60):
            gval = W * x - S - c * r.f(x, idx)
            lo = np.where(gval < 0, x, lo)
            hi = np.where(gval >= 0, x, hi)
            dg = W - c * r.df(x, idx)
            xn = x - gval / np.where(dg > 0, dg, 1.0)
            bad = ~((xn > lo) & (xn < hi)) | (dg <= 0)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            if np.all(np.abs(xn - x) <= 1e-15 * np.maximum(np.abs(x), 1e-300)):
                x = xn
                break
            x = xn
        a = np.where(pos, x, 0.0)
    val = 0.5 * W * a * a - S * a - c * r.F(a, idx)
    return a, val


class _ActiveSet:
    def __init__(self, p: Problem, opts: SolveOptions):
        self.p = p
        self.opts = opts
        g = p.grid
        self.g = g
        D = _disc(p)
        self.D = D
        self.wh = D.wh[0]
        self.wv = D.wv[0]
        self.W = _wsum(self.wh, self.wv, g.shape)
        self.c = D.c
        jj, ii = np.nonzero(g.interior)
        color = (jj + ii) % 2
        self.colors = [(jj[color == k], ii[color == k]) for k in (0, 1)]

    # state <-> (labels, amplitude)
    @staticmethod
    def split(u):
        lab = np.argmax(u, axis=0)
        amp = u.max(axis=0)
        lab = np.where(amp > 0, lab, -1)
        return lab, np.maximum(amp, 0.0)

    def join(self, lab, amp):
        k = self.p.k
        u = np.zeros((k,) + self.g.shape)
        for i in range(k):
            u[i] = np.where(lab == i, amp, 0.0)
        u[:, self.g.boundary] = self.D.phi[:, self.g.boundary]
        return u

    def energy_u(self, u):
        return _dirichlet_part(self.D, u) - _potential_part(self.p, self.D, u)

    # ------------------------------------------------------------------
    def relax(self, u, sweeps):
        """Red-black coordinate minimization over labels and amplitudes."""
        k = self.p.k
        u = u.copy()
        for _ in range(sweeps):
            for jj, ii in self.colors:
                idx = (jj, ii)
                T = np.stack([_nbsum(self.wh, self.wv, u[l])[idx] for l in range(k)])
                A = T.sum(axis=0)
                W = self.W[idx]
                c = self.c[idx]
                cur_amp = u[:, jj, ii].max(axis=0)
                cur_lab = np.where(cur_amp > 0, np.argmax(u[:, jj, ii], axis=0), -1)
                best_val = np.zeros_like(A)
                best_amp = np.zeros_like(A)
                best_lab = np.full(A.shape, -1)
                cur_val = np.zeros_like(A)
                for l, r in enumerate(self.p.reactions):
                    S = 2.0 * T[l] - A
                    a, val = _scalar_min(r, W, S, c, idx)
                    here = cur_lab == l
                    if np.any(here):
                        ca = cur_amp[here]
                        cv = 0.5 * W[here] * ca * ca - S[here] * ca - c[here] * r.F(ca, (jj[here], ii[here]))
                        cur_val[here] = cv
                    better = (val < best_val) & (a > 0)
                    best_val = np.where(better, val, best_val)
                    best_amp = np.where(better, a, best_amp)
                    best_lab = np.where(better, l, best_lab)
                change = best_val < cur_val
                if not np.any(change):
                    continue
                cj, ci = jj[change], ii[change]
                u[:, cj, ci] = 0.0
                bl = best_lab[change]
                ba = best_amp[change]
                has = bl >= 0
                u[bl[has], cj[has], ci[has]] = ba[has]
        return u

    # ------------------------------------------------------------------
    def label_solve(self, lab, amp):
        """Minimize over amplitudes (any sign) with labels frozen."""
        g = self.g
        unk = g.interior & (lab >= 0)
        n = int(unk.sum())
        if n == 0:
            return amp.copy()
        index = np.full(g.shape, -1, dtype=np.int64)
        index[unk] = np.arange(n)
        diag = np.zeros(n)
        rhs = np.zeros(n)
        rows, cols, vals = [], [], []
        for w, sl_p, sl_q in (
            (self.wh, (slice(None), slice(None, -1)), (slice(None), slice(1, None))),
            (self.wv, (slice(None, -1), slice(None)), (slice(1, None), slice(None))),
        ):
            ip, iq = index[sl_p], index[sl_q]
            lp, lq = lab[sl_p], lab[sl_q]
            ap, aq = amp[sl_p], amp[sl_q]
            sig = np.where(lp == lq, 1.0, -1.0)
            for (ia, ib, ab) in ((ip, iq, aq), (iq, ip, ap)):
                m = (ia >= 0) & (w > 0)
                np.add.at(diag, ia[m], w[m])
                both = m & (ib >= 0)
                rows.append(ia[both])
                cols.append(ib[both])
                vals.append(-sig[both] * w[both])
                fixed = m & (ib < 0)
                np.add.at(rhs, ia[fixed], sig[fixed] * w[fixed] * ab[fixed])
        K = sparse.csc_matrix(
            (np.concatenate(vals + [diag]), (np.concatenate(rows + [np.arange(n)]), np.concatenate(cols + [np.arange(n)]))),
            shape=(n, n),
        )
        uj, ui = np.nonzero(unk)
        ul = lab[uj, ui]
        c = self.c[uj, ui]
        reactions = self.p.reactions
        x = amp[uj, ui].copy()
        if all(r.is_linear for r in reactions):
            slope = np.zeros(n)
            for l, r in enumerate(reactions):
                m = ul == l
                slope[m] = _nodal(r.slope, (uj[m], ui[m]))
            A = (K - sparse.diags(c * slope)).tocsc()
            x = splinalg.spsolve(A, rhs)
        else:
            for _ in range(30):
                fx = np.zeros(n)
                dfx = np.zeros(n)
                for l, r in enumerate(reactions):
                    m = ul == l
                    if np.any(m):
                        fx[m] = r.f(x[m], (uj[m], ui[m]))
                        dfx[m] = r.df(x[m], (uj[m], ui[m]))
                res = K @ x - rhs - c * fx
                A = (K - sparse.diags(c * dfx)).tocsc()
                dx = splinalg.spsolve(A, res)
                x = x - dx
                if np.max(np.abs(dx)) <= 1e-13 * max(1.0, np.max(np.abs(x))):
                    break
        out = amp.copy()
        out[uj, ui] = x
        return out

    def repair(self, lab, amp_new, u_prev):
        """Candidates for amplitudes that came out negative."""
        g = self.g
        k = self.p.k
        neg = g.interior & (amp_new < 0)
        if not np.any(neg):
            return [self.join(lab, amp_new)]
        pos_amp = np.where(neg, 0.0, amp_new)
        u_pos = self.join(lab, pos_amp)
        T = np.stack([_nbsum(self.wh, self.wv, u_pos[l]) for l in range(k)])
        T_other = np.where(np.arange(k)[:, None, None] == lab[None], -np.inf, T)
        new_lab = np.argmax(T_other, axis=0)
        has_nb = np.max(T_other, axis=0) > 0
        flip_lab = lab.copy()
        flip_amp = pos_amp.copy()
        ok = neg & has_nb
        flip_lab[ok] = new_lab[ok]
        flip_amp[ok] = -amp_new[ok]
        flip_lab[neg & ~has_nb] = -1
        return [self.join(flip_lab, flip_amp), u_pos]

    def run(self, s0: State):
        opts = self.opts
        u = np.array(s0.u)
        e = self.energy_u(u)
        trace = [e]
        converged = False
        it = 0
        for it in range(1, opts.max_iters + 1):
            lab, amp = self.split(u)
            cands = self.repair(lab, self.label_solve(lab, amp), u)
            u_next, e_next = u, e
            for cand in cands:
                ec = self.energy_u(cand)
                if ec <= e_next:
                    u_next, e_next = cand, ec
                    break
            if opts.sweeps:
                relaxed = self.relax(u_next, opts.sweeps)
                er = self.energy_u(relaxed)
                if er <= e_next:
                    u_next, e_next = relaxed, er
            same_labels = np.array_equal(self.split(u_next)[0], lab)
            if e_next > e:
                break
            u, e = u_next, e_next
            trace.append(e)
            scale = max(abs(e), 1e-300)
            if same_labels and trace[-2] - e <= opts.energy_tol * scale:
                converged = True
                break
            if len(trace) > opts.window and trace[-1 - opts.window] - e <= opts.energy_tol * scale:
                converged = True
                break
        return u, trace, it, converged


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def _require_solvable(p: Problem):
    rep = validate_admissible(p.boundary)
    if not rep.ok:
        v = rep.violations[0]
        raise InadmissibleDataError(
            f"boundary data not admissible: {len(rep.violations)} violation(s), first {v['kind']} at node {v['node']}"
        )
    checked = []
    for i in range(p.k):
        key = (p.reactions[i], p.diffusions[i])
        hit = next((rep for kk, rep in checked if kk[0] == key[0] and kk[1] == key[1]), None)
        if hit is None:
            hit = check_A2(p, i)
            checked.append((key, hit))
        if not hit.holds:
            raise A2ViolationError(i, hit.min_eigenvalue)


def solve(p: Problem, opts: SolveOptions | None = None, init_state: State | None = None) -> Solution:
    """Minimize the energy over segregated states with the boundary pinned.

    Refuses to run when the boundary data are not admissible or the
    coercivity assumption fails for some density.
    """
    opts = SolveOptions() if opts is None else opts
    _require_solvable(p)
    s0 = init_state if init_state is not None else initial_state(p, opts.init, opts.rng_seed)
    _check_state(s0, p)
    method = opts.method
    if method == "active_set" and not p.equal_diffusions:
        log.info("diffusions differ between densities; using projected gradient")
        method = "projected_gradient"
    if method == "active_set":
        u, trace, iters, converged = _ActiveSet(p, opts).run(s0)
        state = State(p.grid, u)
    else:
        state, trace, iters, converged = _projected_gradient(p, opts, s0)
    seg = is_segregated(state, 0.0)
    assert seg.ok, "solver produced a non-segregated state"
    return Solution(state, trace, iters, converged, _projected_gradient_norm(state, p), method)


def _projected_gradient(p: Problem, opts: SolveOptions, s: State):
    e = energy(s, p)
    trace = [e]
    tau = opts.tau
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        step = descent_step(s, p, tau, e0=e)
        if not step.accepted:
            converged = True
            break
        s, e = step.state, step.energy
        trace.append(e)
        tau = min(2.0 * step.tau, 64.0 * opts.tau)
        if len(trace) > opts.window and trace[-1 - opts.window] - e <= opts.energy_tol * max(abs(e), 1e-300):
            converged = True
            break
    return s, trace, it, converged


# --------------------------------------------------------------------------
# uniqueness and continuity studies
# --------------------------------------------------------------------------


def state_distance(a: State, b: State) -> float:
    """Quadrature ``L^2`` distance ``sqrt(sum_i sum_p c_p (a_i - b_i)^2)``."""
    if a.grid.shape != b.grid.shape or a.k != b.k:
        raise GridMismatchError("states are not comparable")
    c = a.grid.node_weights
    return float(np.sqrt(np.sum(c[None] * (a.u - b.u) ** 2)))


def state_norm(a: State) -> float:
    c = a.grid.node_weights
    return float(np.sqrt(np.sum(c[None] * a.u**2)))


def h1_distance(a: State, b: State) -> float:
    """Discrete ``H^1`` distance: gradient energy plus ``L^2`` mass of the difference, summed over densities."""
    if a.grid.shape != b.grid.shape or a.k != b.k:
        raise GridMismatchError("states are not comparable")
    g = a.grid
    tot = 0.0
    for i in range(a.k):
        diff = a.u[i] - b.u[i]
        tot += float(np.sum(gradient_energy_density(g, diff))) + integrate(g, diff * diff)
    return float(np.sqrt(max(tot, 0.0)))


def h1_norm(a: State) -> float:
    return h1_distance(a, State(a.grid, np.zeros_like(a.u)))


@dataclass
class MultiStartReport:
    solutions: list
    seeds: list
    max_distance: float
    energy_spread: float
    norm: float

    @property
    def relative_distance(self) -> float:
        return self.max_distance / self.norm if self.norm > 0 else self.max_distance

    @property
    def relative_energy_spread(self) -> float:
        emax = max(abs(s.energy) for s in self.solutions)
        return self.energy_spread / emax if emax > 0 else self.energy_spread


def _run_parallel(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def multi_start(p: Problem, n: int = 10, opts: SolveOptions | None = None, seeds=None,
                workers: int | None = None) -> MultiStartReport:
    """Solve from ``n`` random starts and measure how far the results spread."""
    if seeds is None:
        if n < 2:
            raise ConfigurationError("multi_start needs n >= 2")
        seeds = list(range(n))
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigurationError("multi_start needs at least two seeds")
    base = SolveOptions() if opts is None else opts
    _require_solvable(p)

    def one(seed):
        o = SolveOptions(base.tau, base.max_iters, base.energy_tol, seed, "random", base.method, base.sweeps, base.window)
        return solve(p, o)

    sols = _run_parallel(one, seeds, workers)
    dmax = 0.0
    for a in range(len(sols)):
        for b in range(a + 1, len(sols)):
            dmax = max(dmax, state_distance(sols[a].state, sols[b].state))
    energies = [s.energy for s in sols]
    norm = max(state_norm(s.state) for s in sols)
    return MultiStartReport(sols, seeds, dmax, float(max(energies) - min(energies)), norm)


@dataclass
class PerturbationRow:
    eps: float
    distance: float
    ratio: float
    energy: float


def perturbation_study(p: Problem, eps_list, opts: SolveOptions | None = None,
                       base: Solution | None = None, workers: int | None = None):
    """Scale every trace by ``1 + eps``, re-solve and measure the ``H^1`` distance.

    Returns ``(base_solution, rows)``.
    """
    opts = SolveOptions() if opts is None else opts
    base = solve(p, opts) if base is None else base

    def one(eps):
        eps = float(eps)
        if eps == 0.0:
            return PerturbationRow(0.0, 0.0, 0.0, base.energy)
        bd = BoundaryData(p.grid, p.boundary.values * (1.0 + eps))
        rep = validate_admissible(bd)
        if not rep.ok:
            raise InadmissibleDataError(f"perturbation eps={eps} gives inadmissible data")
        sol = solve(p.with_boundary(bd), opts)
        dist = h1_distance(sol.state, base.state)
        return PerturbationRow(eps, dist, dist / abs(eps), sol.energy)

    rows = _run_parallel(one, list(eps_list), workers)
    return base, rows
