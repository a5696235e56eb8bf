"""Problem data: reaction terms, diffusions, boundary traces and their validators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import linalg as splinalg

from .errors import ConfigurationError, ConvergenceError, DomainError, GridMismatchError
from .grid import Grid, check_field, laplacian5

__all__ = [
    "ReactionTerm",
    "Zero",
    "Linear",
    "ConcaveQuadratic",
    "Logistic",
    "SublinearCap",
    "TransformedReaction",
    "make_reaction",
    "reaction_eval",
    "potential_eval",
    "DiffusionCoeff",
    "BoundaryData",
    "Problem",
    "AdmissibilityReport",
    "validate_admissible",
    "A2Report",
    "check_A2",
    "dirichlet_form",
    "uniqueness_condition_check",
    "RescaledProblem",
    "rescale_to_unit_diffusion",
]


# --------------------------------------------------------------------------
# reaction terms
# --------------------------------------------------------------------------


class ReactionTerm:
    """A reaction ``f(s)`` with exact potential ``F(s) = int_0^s f``.

    Subclasses define ``_f``, ``_F`` and ``_df`` for ``s >= 0``; negative
    arguments use the odd extension of ``f`` and the even extension of ``F``.
    The optional ``idx`` argument selects nodes for reactions whose
    parameters vary in space; constant reactions ignore it.
    """

    name = "abstract"

    def f(self, s, idx=None):
        s = np.asarray(s, dtype=float)
        return np.sign(s) * self._f(np.abs(s), idx)

    def F(self, s, idx=None):
        s = np.asarray(s, dtype=float)
        return self._F(np.abs(s), idx)

    def df(self, s, idx=None):
        s = np.asarray(s, dtype=float)
        return self._df(np.abs(s), idx)

    @property
    def lipschitz(self) -> float:
        raise NotImplementedError

    @property
    def growth_bound(self):
        """``b`` with ``|f(s)| <= b * s`` for every ``s >= 0``."""
        raise NotImplementedError

    @property
    def sup_df(self):
        """``sup_s f'(s)``, i.e. the supremum of the second derivative of ``F``."""
        raise NotImplementedError

    @property
    def is_linear(self) -> bool:
        return False

    def params(self) -> dict:
        return {}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self.params().items()))))


class Zero(ReactionTerm):
    name = "zero"

    def _f(self, s, idx=None):
        return np.zeros_like(s)

    def _F(self, s, idx=None):
        return np.zeros_like(s)

    def _df(self, s, idx=None):
        return np.zeros_like(s)

    lipschitz = 0.0
    growth_bound = 0.0
    sup_df = 0.0

    @property
    def is_linear(self):
        return True

    slope = 0.0


class Linear(ReactionTerm):
    """``f(s) = lam * s``."""

    name = "linear"

    def __init__(self, lam: float):
        self.lam = float(lam)

    def _f(self, s, idx=None):
        return self.lam * s

    def _F(self, s, idx=None):
        return 0.5 * self.lam * s * s

    def _df(self, s, idx=None):
        return np.full_like(s, self.lam)

    @property
    def lipschitz(self):
        return abs(self.lam)

    @property
    def growth_bound(self):
        return abs(self.lam)

    @property
    def sup_df(self):
        return self.lam

    @property
    def is_linear(self):
        return True

    @property
    def slope(self):
        return self.lam

    def params(self):
        return {"lam": self.lam}


class ConcaveQuadratic(ReactionTerm):
    """``f(s) = -2 c s``, so ``F(s) = -c s^2`` is concave."""

    name = "concave_quadratic"

    def __init__(self, c: float):
        if not c >= 0:
            raise ConfigurationError(f"concave_quadratic needs c >= 0, got {c}")
        self.c = float(c)

    def _f(self, s, idx=None):
        return -2.0 * self.c * s

    def _F(self, s, idx=None):
        return -self.c * s * s

    def _df(self, s, idx=None):
        return np.full_like(s, -2.0 * self.c)

    @property
    def lipschitz(self):
        return 2.0 * self.c

    @property
    def growth_bound(self):
        return 2.0 * self.c

    @property
    def sup_df(self):
        return -2.0 * self.c

    @property
    def is_linear(self):
        return True

    @property
    def slope(self):
        return -2.0 * self.c

    def params(self):
        return {"c": self.c}


class Logistic(ReactionTerm):
    """``f(s) = s (a - s)`` on ``[0, a]`` and 0 beyond."""

    name = "logistic"

    def __init__(self, a: float):
        if not a > 0:
            raise ConfigurationError(f"logistic needs a > 0, got {a}")
        self.a = float(a)

    def _f(self, s, idx=None):
        return np.where(s <= self.a, s * (self.a - s), 0.0)

    def _F(self, s, idx=None):
        t = np.minimum(s, self.a)
        return 0.5 * self.a * t * t - t**3 / 3.0

    def _df(self, s, idx=None):
        return np.where(s <= self.a, self.a - 2.0 * s, 0.0)

    @property
    def lipschitz(self):
        return self.a

    @property
    def growth_bound(self):
        return self.a

    @property
    def sup_df(self):
        return self.a

    def params(self):
        return {"a": self.a}


class SublinearCap(ReactionTerm):
    """``f(s) = min(lam * s, s^(1/3))``: linear near 0, sublinear at infinity."""

    name = "sublinear_cap"

    def __init__(self, lam: float):
        if not lam > 0:
            raise ConfigurationError(f"sublinear_cap needs lam > 0, got {lam}")
        self.lam = float(lam)
        self._s_star = self.lam ** -1.5

    def _f(self, s, idx=None):
        return np.minimum(self.lam * s, np.cbrt(s))

    def _F(self, s, idx=None):
        ss = self._s_star
        low = 0.5 * self.lam * s * s
        high = 0.5 * self.lam * ss * ss + 0.75 * (np.abs(s) ** (4.0 / 3.0) - ss ** (4.0 / 3.0))
        return np.where(s <= ss, low, high)

    def _df(self, s, idx=None):
        with np.errstate(divide="ignore"):
            tail = np.where(s > 0, np.abs(s) ** (-2.0 / 3.0) / 3.0, 0.0)
        return np.where(s <= self._s_star, self.lam, tail)

    @property
    def lipschitz(self):
        return self.lam

    @property
    def growth_bound(self):
        return self.lam

    @property
    def sup_df(self):
        return self.lam

    def params(self):
        return {"lam": self.lam}


class TransformedReaction(ReactionTerm):
    """Reaction seen by ``v = d u`` after removing a variable diffusion ``d``.

    ``f~(v) = f(v/d)/d - q v`` and ``F~(v) = F(v/d) - q v^2 / 2`` with
    ``q = Delta_h d / d``; both ``d`` and ``q`` are node arrays.
    """

    name = "transformed"

    def __init__(self, base: ReactionTerm, d: np.ndarray, q: np.ndarray):
        self.base = base
        self.d = np.asarray(d, dtype=float)
        self.q = np.asarray(q, dtype=float)

    def _dq(self, idx):
        if idx is None:
            return self.d, self.q
        return self.d[idx], self.q[idx]

    def f(self, s, idx=None):
        d, q = self._dq(idx)
        s = np.asarray(s, dtype=float)
        return self.base.f(s / d) / d - q * s

    def F(self, s, idx=None):
        d, q = self._dq(idx)
        s = np.asarray(s, dtype=float)
        return self.base.F(s / d) - 0.5 * q * s * s

    def df(self, s, idx=None):
        d, q = self._dq(idx)
        s = np.asarray(s, dtype=float)
        return self.base.df(s / d) / (d * d) - q

    @property
    def lipschitz(self):
        return float(np.max(self.base.lipschitz / self.d**2 + np.abs(self.q)))

    @property
    def growth_bound(self):
        return self.base.growth_bound / self.d**2 + np.abs(self.q)

    @property
    def sup_df(self):
        return self.base.sup_df / self.d**2 - self.q

    @property
    def is_linear(self):
        return self.base.is_linear

    @property
    def slope(self):
        return self.base.slope / self.d**2 - self.q

    def params(self):
        return {"base": self.base.params()}

    def __eq__(self, other):
        return (
            isinstance(other, TransformedReaction)
            and self.base == other.base
            and np.array_equal(self.d, other.d)
            and np.array_equal(self.q, other.q)
        )

    __hash__ = None


_REACTIONS = {
    "zero": (Zero, ()),
    "linear": (Linear, ("lam",)),
    "concave_quadratic": (ConcaveQuadratic, ("c",)),
    "logistic": (Logistic, ("a",)),
    "sublinear_cap": (SublinearCap, ("lam",)),
}


def make_reaction(name: str, **params) -> ReactionTerm:
    """Instantiate a reaction variant by its config name."""
    try:
        cls, keys = _REACTIONS[name]
    except KeyError:
        raise ConfigurationError(f"unknown reaction {name!r}; choose from {sorted(_REACTIONS)}") from None
    extra = set(params) - set(keys)
    missing = set(keys) - set(params)
    if extra or missing:
        raise ConfigurationError(
            f"reaction {name!r} takes parameters {list(keys)}, got {sorted(params)}"
        )
    return cls(**params)


def reaction_eval(t: ReactionTerm, s):
    out = t.f(s)
    return float(out) if np.ndim(out) == 0 else out


def potential_eval(t: ReactionTerm, s):
    out = t.F(s)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# diffusion and boundary data
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiffusionCoeff:
    """Constant or nodal diffusion coefficient."""

    value: float | np.ndarray = 1.0

    def __post_init__(self):
        v = self.value
        if np.ndim(v) == 0:
            v = float(v)
            if not (np.isfinite(v) and v > 0):
                raise ConfigurationError(f"diffusion must be positive, got {v}")
            object.__setattr__(self, "value", v)
        else:
            object.__setattr__(self, "value", np.asarray(v, dtype=float))

    @property
    def is_constant(self) -> bool:
        return np.ndim(self.value) == 0

    def field(self, grid: Grid) -> np.ndarray:
        if self.is_constant:
            return np.full(grid.shape, self.value)
        v = check_field(grid, self.value, "diffusion")
        vin = v[grid.inside]
        if not (np.all(np.isfinite(vin)) and np.all(vin > 0)):
            raise ConfigurationError("diffusion must be finite and positive at every masked-in node")
        return np.where(grid.inside, v, 1.0)

    def __eq__(self, other):
        return isinstance(other, DiffusionCoeff) and np.array_equal(self.value, other.value)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Traces ``phi_i`` at boundary nodes, stored as a ``(k, ny, nx)`` array.

    Values off the boundary are ignored and stored as 0.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1:] != self.grid.shape:
            raise GridMismatchError(f"boundary values have shape {v.shape}, grid is {self.grid.shape}")
        v[:, ~self.grid.boundary] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_functions(cls, grid: Grid, funcs) -> "BoundaryData":
        """Sample callables ``phi(x, y)`` on the boundary nodes."""
        vals = np.stack([np.broadcast_to(np.asarray(fn(grid.x, grid.y), dtype=float), grid.shape) for fn in funcs])
        return cls(grid, vals)

    def scaled(self, factor: float) -> "BoundaryData":
        return BoundaryData(self.grid, self.values * factor)

    @property
    def max_value(self) -> float:
        return float(np.max(self.values)) if self.values.size else 0.0


@dataclass(frozen=True, eq=False)
class Problem:
    """Complete datum of the segregation problem on a grid."""

    grid: Grid
    reactions: tuple
    diffusions: tuple
    boundary: BoundaryData
    segregation_tol: float = 1e-12
    residual_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "reactions", tuple(self.reactions))
        diffs = tuple(d if isinstance(d, DiffusionCoeff) else DiffusionCoeff(d) for d in self.diffusions)
        object.__setattr__(self, "diffusions", diffs)
        k = len(self.reactions)
        if k < 2:
            raise ConfigurationError(f"k >= 2 required, got k={k}")
        if len(diffs) != k or self.boundary.k != k:
            raise ConfigurationError(
                f"inconsistent density counts: {k} reactions, {len(diffs)} diffusions, {self.boundary.k} traces"
            )
        if self.boundary.grid is not self.grid and self.boundary.grid.shape != self.grid.shape:
            raise GridMismatchError("boundary data are bound to a different grid")
        for d in diffs:
            d.field(self.grid)

    @property
    def k(self) -> int:
        return len(self.reactions)

    def diffusion_field(self, i: int) -> np.ndarray:
        return self.diffusions[i].field(self.grid)

    @property
    def unit_diffusion(self) -> bool:
        return all(d.is_constant and d.value == 1.0 for d in self.diffusions)

    @property
    def equal_diffusions(self) -> bool:
        first = self.diffusions[0]
        return all(d == first for d in self.diffusions[1:])

    def with_boundary(self, boundary: BoundaryData) -> "Problem":
        return Problem(self.grid, self.reactions, self.diffusions, boundary, self.segregation_tol, self.residual_tol)


# --------------------------------------------------------------------------
# validators
# --------------------------------------------------------------------------


@dataclass
class AdmissibilityReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_admissible(bd: BoundaryData, tol: float = 0.0) -> AdmissibilityReport:
    """List boundary nodes where a trace is negative or two traces overlap.

    Entries are dicts with ``kind`` ("negative" or "overlap"), ``node``
    ``(j, i)``, ``densities`` (0-based) and ``value``.
    """
    rep = AdmissibilityReport()
    v = bd.values
    bmask = bd.grid.boundary
    nonfinite = ~np.isfinite(v) & bmask[None]
    for i, j, ii in zip(*np.nonzero(nonfinite)):
        rep.violations.append({"kind": "nonfinite", "node": (int(j), int(ii)), "densities": (int(i),), "value": float(v[i, j, ii])})
    neg = (v < -tol) & bmask[None]
    for i, j, ii in zip(*np.nonzero(neg)):
        rep.violations.append({"kind": "negative", "node": (int(j), int(ii)), "densities": (int(i),), "value": float(v[i, j, ii])})
    pos = np.maximum(v, 0.0)
    for a in range(bd.k):
        for b in range(a + 1, bd.k):
            prod = pos[a] * pos[b]
            bad = (prod > tol * tol) & bmask
            for j, ii in zip(*np.nonzero(bad)):
                rep.violations.append({"kind": "overlap", "node": (int(j), int(ii)), "densities": (a, b), "value": float(prod[j, ii])})
    return rep


def dirichlet_form(grid: Grid, d=1.0):
    """Sparse matrix ``K`` on interior unknowns with ``w^T K w = int d^2 |grad w|^2``.

    Uses the same edge weights as the energy: every lattice edge carries
    half the cell-averaged ``d^2`` of each valid cell it borders.
    """
    from scipy import sparse

    dd = check_field(grid, d, "diffusion")
    d2 = dd * dd
    d2c = 0.25 * (d2[:-1, :-1] + d2[:-1, 1:] + d2[1:, :-1] + d2[1:, 1:])
    d2c = np.where(grid.cell_valid, d2c, 0.0)
    wh = np.zeros((grid.ny, grid.nx - 1))
    wh[:-1] += 0.5 * d2c
    wh[1:] += 0.5 * d2c
    wv = np.zeros((grid.ny - 1, grid.nx))
    wv[:, :-1] += 0.5 * d2c
    wv[:, 1:] += 0.5 * d2c
    idx = grid.interior_index
    n = int(grid.interior.sum())
    diag = np.zeros(n)
    rows, cols, vals = [], [], []
    for w, a, b in (
        (wh, idx[:, :-1], idx[:, 1:]),
        (wv, idx[:-1, :], idx[1:, :]),
    ):
        for p, q in ((a, b), (b, a)):
            m = p >= 0
            np.add.at(diag, p[m], w[m])
            mm = m & (q >= 0)
            rows.append(p[mm])
            cols.append(q[mm])
            vals.append(-w[mm])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    return sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


@dataclass
class A2Report:
    holds: bool
    min_eigenvalue: float
    iterations: int
    bound: float

    def __bool__(self) -> bool:
        return self.holds


def _smallest_generalized_eigenvalue(K, mdiag, lower, max_iter=1000, tol=1e-12, seed=0):
    """Inverse power iteration for the smallest eigenvalue of ``K x = mu diag(m) x``."""
    from scipy import sparse

    sigma = lower - 1.0
    n = K.shape[0]
    A = (K - sigma * sparse.diags(mdiag)).tocsc()
    lu = splinalg.splu(A)
    rng = np.random.default_rng(seed)
    x = 1.0 + 0.1 * rng.random(n)
    mu_old = np.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(mdiag * x)
        y /= np.sqrt(np.dot(y, mdiag * y))
        mu = float(y @ (K @ y))
        x = y
        if abs(mu - mu_old) <= tol * max(1.0, abs(mu)):
            return mu, x, it
        mu_old = mu
    raise ConvergenceError(f"inverse power iteration did not converge in {max_iter} iterations")


def check_A2(p: Problem, i: int, max_iter: int = 1000) -> A2Report:
    """Smallest eigenvalue of ``w -> int d_i^2 |grad w|^2 - b_i w^2`` on fields vanishing at the boundary.

    The eigenvalue is taken relative to the discrete ``L^2`` mass, so for
    ``d = 1, b = 0`` it approximates the first Dirichlet eigenvalue.
    ``holds`` is ``min_eigenvalue > 0``.
    """
    if not 0 <= i < p.k:
        raise IndexError(f"density index {i} out of range for k={p.k}")
    grid = p.grid
    K = dirichlet_form(grid, p.diffusion_field(i))
    c = grid.node_weights[grid.interior]
    b = np.broadcast_to(np.asarray(p.reactions[i].growth_bound, dtype=float), grid.shape)[grid.interior]
    from scipy import sparse

    Kb = (K - sparse.diags(c * b)).tocsc()
    lower = -float(np.max(np.maximum(b, 0.0)))
    mu, _, its = _smallest_generalized_eigenvalue(Kb, c, lower, max_iter=max_iter)
    return A2Report(mu > 0, mu, its, float(np.max(b)))


@dataclass
class UniquenessReport:
    holds: bool
    residual: np.ndarray
    worst: float
    worst_node: tuple | None
    worst_density: int | None

    def __bool__(self) -> bool:
        return self.holds


def uniqueness_condition_check(p: Problem, d, tol: float | None = None) -> UniquenessReport:
    """Evaluate ``-Delta d + (Delta d_i / d_i - b_i / (2 d_i^2)) d`` for every density.

    ``b_i`` is the supremum of ``f_i'``.  The condition holds when the
    expression is ``>= -tol`` at every interior node for every ``i``.  The
    returned residual has shape ``(k, ny, nx)`` with ``NaN`` off the interior.
    """
    grid = p.grid
    tol = p.residual_tol if tol is None else tol
    d = check_field(grid, d, "candidate")
    if np.any(~np.isfinite(d[grid.inside])) or np.any(d[grid.inside] <= 0):
        raise DomainError("candidate d must be positive at every masked-in node")
    lap_d = laplacian5(grid, d)
    res = np.full((p.k,) + grid.shape, np.nan)
    for i in range(p.k):
        di = p.diffusion_field(i)
        bi = np.broadcast_to(np.asarray(p.reactions[i].sup_df, dtype=float), grid.shape)
        coef = laplacian5(grid, di) / di - bi / (2.0 * di * di)
        res[i] = -lap_d + coef * d
    interior = res[:, grid.interior]
    worst = float(np.min(interior))
    flat = int(np.argmin(np.where(grid.interior[None], res, np.inf)))
    wi, wj, wx = np.unravel_index(flat, res.shape)
    return UniquenessReport(worst >= -tol, res, worst, (int(wj), int(wx)), int(wi))


# --------------------------------------------------------------------------
# variable diffusion
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RescaledProblem:
    """Unit-diffusion problem for ``v_i = d_i u_i`` with the node-wise maps."""

    problem: Problem
    original: Problem
    scales: np.ndarray  # (k, ny, nx) nodal d_i

    def forward(self, u):
        """``u -> v = d u`` on a State or a ``(k, ny, nx)`` array."""
        return self._map(u, self.scales)

    def backward(self, v):
        """``v -> u = v / d``."""
        return self._map(v, 1.0 / self.scales)

    def _map(self, s, factor):
        from .segregation import State

        if isinstance(s, State):
            return State(self.problem.grid, np.asarray(s.u) * factor)
        return np.asarray(s, dtype=float) * factor


def rescale_to_unit_diffusion(p: Problem) -> RescaledProblem:
    """Reduce variable diffusions to ``d = 1`` through ``v_i = d_i u_i``.

    The Dirichlet term transforms as
    ``d^2 |grad u|^2 = |grad v|^2 + (Delta d / d) v^2`` up to a divergence,
    so the new potential is ``F(v/d) - (Delta d / (2 d)) v^2``.  ``Delta``
    is the five-point Laplacian; it is set to 0 off the interior, where the
    state is pinned anyway.
    """
    grid = p.grid
    if p.unit_diffusion:
        scales = np.ones((p.k,) + grid.shape)
        return RescaledProblem(p, p, scales)
    scales = np.stack([p.diffusion_field(i) for i in range(p.k)])
    if np.any(scales[:, grid.inside] <= 0):
        raise DomainError("diffusion must be positive to rescale")
    reactions = []
    for i in range(p.k):
        d = scales[i]
        q = np.where(grid.interior, laplacian5(grid, d), 0.0) / d
        if p.diffusions[i].is_constant and p.diffusions[i].value == 1.0:
            reactions.append(p.reactions[i])
        else:
            reactions.append(TransformedReaction(p.reactions[i], d, q))
    boundary = BoundaryData(grid, p.boundary.values * scales)
    newp = Problem(grid, tuple(reactions), tuple(DiffusionCoeff(1.0) for _ in range(p.k)), boundary,
                   p.segregation_tol, p.residual_tol)
    return RescaledProblem(newp, p, scales)
