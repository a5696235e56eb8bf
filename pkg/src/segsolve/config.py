"""Run configuration: TOML parsing, validation, canonical form, problem assembly.

A configuration has the sections ``domain``, ``problem``, ``density``
(an array of tables, one per density), ``boundary``, ``solve``, ``verify``,
``sweep`` and ``output``.  Every key is checked against a schema; unknown
keys are errors and missing keys take their documented defaults, so the
canonical text produced by :func:`canonical_text` lists every setting.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from importlib import resources

import numpy as np
import tomli
import tomli_w

from .errors import ConfigurationError
from .grid import Grid, build_grid
from .minimizer import SolveOptions
from .problem import BoundaryData, DiffusionCoeff, Problem, make_reaction

__all__ = [
    "RunConfig",
    "parse_config",
    "load_config",
    "load_preset",
    "preset_names",
    "canonical_text",
    "config_digest",
    "build_grid_from",
    "build_problem",
    "build_options",
]

# key -> (kind, default); kind is a type name understood by _coerce
_SCHEMA = {
    "domain": {
        "nx": ("int", 65),
        "ny": ("int", 0),  # 0: same as nx
        "extent": ("float", 1.0),
        "shape": ("str", "rectangle"),
        "origin": ("floats2", [0.0, 0.0]),
        "center": ("floats2", []),  # empty: lattice centre
        "radius": ("float", 0.0),  # 0: inscribed
    },
    "problem": {
        "k": ("int", 2),
        "segregation_tol": ("float", 1e-12),
        "residual_tol": ("float", 1e-6),
    },
    "boundary": {
        "preset": ("str", "two_phase"),
        "amplitude": ("float", 1.0),
        "order": ("int", 3),
        "theta0": ("float", 0.0),
        "arc": ("arcs", []),
    },
    "solve": {
        "method": ("str", "active_set"),
        "init": ("str", "harmonic_blend"),
        "tau": ("float", 0.25),
        "max_iters": ("int", 2000),
        "energy_tol": ("float", 1e-10),
        "seed": ("int", 0),
        "sweeps": ("int", 4),
        "rescale": ("bool", True),
    },
    "verify": {
        "extremality": ("bool", True),
        "extremality_C": ("float", 1.0),
        "barriers": ("bool", True),
        "acf": ("bool", True),
        "acf_eps": ("float", 1e-6),
        "lipschitz": ("bool", True),
        "lipschitz_delta": ("float", 0.1),
        "junction": ("bool", False),
        "junction_angle_tol_deg": ("float", 5.0),
        "junction_exponent_tol": ("float", 0.1),
        "junction_decay_min": ("float", 1.3),
        "expect_a2_failure": ("bool", False),
    },
    "sweep": {
        "grids": ("ints", []),
        "lipschitz_rel_tol": ("float", 0.1),
        "eps": ("floats", []),
        "perturbation_rel_tol": ("float", 1e-2),
        "seeds": ("int", 0),
        "uniqueness_rel_tol": ("float", 1e-4),
        "energy_spread_tol": ("float", 1e-8),
    },
    "output": {
        "fields": ("bool", True),
        "image": ("bool", True),
    },
}

_DENSITY_SCHEMA = {
    "reaction": ("str", "zero"),
    "params": ("table", {}),
    "diffusion": ("diffusion", 1.0),
}

_ARC_SCHEMA = {
    "density": ("int", None),
    "start": ("float", None),
    "end": ("float", None),
    "value": ("float", 1.0),
    "profile": ("str", "sine"),
}

_SHAPES = ("rectangle", "disk")
_BOUNDARY_PRESETS = ("two_phase", "junction", "arcs", "zero")
_PROFILES = ("constant", "sine")


def _coerce(kind, value, where):
    def bad(msg="wrong type"):
        return ConfigurationError(f"{where}: {msg} (got {value!r})")

    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("expected an integer")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("expected a number")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise bad("expected a string")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad("expected true or false")
        return value
    if kind in ("floats", "floats2", "ints"):
        if not isinstance(value, list):
            raise bad("expected an array")
        sub = "int" if kind == "ints" else "float"
        out = [_coerce(sub, v, f"{where}[{n}]") for n, v in enumerate(value)]
        if kind == "floats2" and len(out) not in (0, 2):
            raise bad("expected two numbers")
        return out
    if kind == "table":
        if not isinstance(value, dict):
            raise bad("expected a table")
        return {str(k): _coerce("float", v, f"{where}.{k}") for k, v in value.items()}
    if kind == "diffusion":
        if isinstance(value, dict):
            extra = set(value) - {"kind", "amplitude"}
            if extra:
                raise ConfigurationError(f"{where}: unknown key(s) {sorted(extra)}")
            kd = _coerce("str", value.get("kind", "radial_quadratic"), f"{where}.kind")
            if kd != "radial_quadratic":
                raise ConfigurationError(f"{where}.kind: only 'radial_quadratic' is supported")
            return {"kind": kd, "amplitude": _coerce("float", value.get("amplitude", 0.0), f"{where}.amplitude")}
        return _coerce("float", value, where)
    if kind == "arcs":
        if not isinstance(value, list):
            raise bad("expected an array of tables")
        return [_section(_ARC_SCHEMA, v, f"{where}[{n}]") for n, v in enumerate(value)]
    raise AssertionError(kind)


def _section(schema, raw, where):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where}: expected a table")
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {sorted(unknown)}")
    out = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            out[key] = _coerce(kind, raw[key], f"{where}.{key}")
        elif default is None:
            raise ConfigurationError(f"{where}.{key}: required")
        else:
            out[key] = copy.deepcopy(default)
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` holds every section with defaults filled."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def k(self) -> int:
        return self.data["problem"]["k"]

    def with_overrides(self, seed: int | None = None, grid: int | None = None) -> "RunConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["solve"]["seed"] = int(seed)
        if grid is not None:
            d["domain"]["nx"] = int(grid)
            d["domain"]["ny"] = 0
        return _validate(d)


def _validate(raw: dict) -> RunConfig:
    known = set(_SCHEMA) | {"density"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown section(s) {sorted(unknown)}")
    data = {name: _section(schema, raw.get(name, {}), name) for name, schema in _SCHEMA.items()}
    dens = raw.get("density", [])
    if not isinstance(dens, list):
        raise ConfigurationError("density: expected an array of tables ([[density]])")
    data["density"] = [_section(_DENSITY_SCHEMA, d, f"density[{n}]") for n, d in enumerate(dens)]

    dom = data["domain"]
    if dom["nx"] < 3 or (dom["ny"] not in (0,) and dom["ny"] < 3):
        raise ConfigurationError("domain.nx/ny: node counts must be >= 3")
    if dom["extent"] <= 0:
        raise ConfigurationError("domain.extent: must be positive")
    if dom["shape"] not in _SHAPES:
        raise ConfigurationError(f"domain.shape: must be one of {_SHAPES}")
    k = data["problem"]["k"]
    if k < 2:
        raise ConfigurationError(f"problem.k: k >= 2 required, got {k}")
    if len(data["density"]) != k:
        raise ConfigurationError(f"density: {len(data['density'])} entries for k={k}")
    for n, d in enumerate(data["density"]):
        try:
            make_reaction(d["reaction"], **d["params"])
        except ConfigurationError as exc:
            raise ConfigurationError(f"density[{n}]: {exc}") from None
        if isinstance(d["diffusion"], float) and d["diffusion"] <= 0:
            raise ConfigurationError(f"density[{n}].diffusion: must be positive")
    b = data["boundary"]
    if b["preset"] not in _BOUNDARY_PRESETS:
        raise ConfigurationError(f"boundary.preset: must be one of {_BOUNDARY_PRESETS}")
    if b["preset"] == "junction" and b["order"] != k:
        raise ConfigurationError(f"boundary.order: junction data need order == k ({k})")
    if b["preset"] == "two_phase" and k != 2:
        raise ConfigurationError("boundary.preset: two_phase data need k == 2")
    for n, arc in enumerate(b["arc"]):
        if not 1 <= arc["density"] <= k:
            raise ConfigurationError(f"boundary.arc[{n}].density: must be in 1..{k}")
        if arc["profile"] not in _PROFILES:
            raise ConfigurationError(f"boundary.arc[{n}].profile: must be one of {_PROFILES}")
        if not 0.0 <= arc["start"] < arc["end"] <= 1.0:
            raise ConfigurationError(f"boundary.arc[{n}]: need 0 <= start < end <= 1")
    s = data["solve"]
    try:
        SolveOptions(s["tau"], s["max_iters"], s["energy_tol"], s["seed"], s["init"], s["method"], s["sweeps"])
    except ConfigurationError as exc:
        raise ConfigurationError(f"solve: {exc}") from None
    return RunConfig(data)


def parse_config(text: str) -> RunConfig:
    """Parse and validate TOML text.  Syntax errors report the line number."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"syntax error: {exc}") from None
    return _validate(raw)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def preset_names() -> list:
    root = resources.files("segsolve") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_preset(name: str) -> RunConfig:
    root = resources.files("segsolve") / "presets"
    res = root / f"{name}.toml"
    if not res.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {preset_names()}")
    return parse_config(res.read_text(encoding="utf-8"))


def canonical_text(cfg: RunConfig) -> str:
    """Deterministic TOML text of the fully defaulted configuration."""

    def sort(obj):
        if isinstance(obj, dict):
            return {k: sort(obj[k]) for k in sorted(obj)}
        if isinstance(obj, list):
            return [sort(v) for v in obj]
        return obj

    return tomli_w.dumps(sort(cfg.data))


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------


def build_grid_from(cfg: RunConfig) -> Grid:
    d = cfg["domain"]
    ny = d["ny"] or d["nx"]
    kw = {"origin": tuple(d["origin"])}
    if d["shape"] == "disk":
        if d["center"]:
            kw["center"] = tuple(d["center"])
        if d["radius"] > 0:
            kw["radius"] = d["radius"]
    return build_grid(d["nx"], ny, d["extent"], d["shape"], **kw)


def _domain_center(g: Grid):
    if g.shape_kind == "disk":
        return g.center
    xmin, xmax, ymin, ymax = g.extent
    return (0.5 * (xmin + xmax), 0.5 * (ymin + ymax))


def boundary_parameter(g: Grid) -> np.ndarray:
    """Position in ``[0, 1)`` of every node along the boundary, counterclockwise.

    Disks use the polar angle about the centre over ``2 pi``; rectangles use
    arclength from the lower-left corner over the perimeter.
    """
    if g.shape_kind == "disk":
        cx, cy = g.center
        return np.mod(np.arctan2(g.y - cy, g.x - cx), 2 * np.pi) / (2 * np.pi)
    xmin, xmax, ymin, ymax = g.extent
    w, hgt = xmax - xmin, ymax - ymin
    per = 2 * (w + hgt)
    x, y = g.x - xmin, g.y - ymin
    tol = 1e-9 * g.h
    s = np.full(g.shape, np.nan)
    s = np.where(np.abs(x - w) <= tol, w + y, s)
    s = np.where(np.abs(y - hgt) <= tol, 2 * w + hgt - x, s)
    s = np.where(np.abs(x) <= tol, 2 * w + 2 * hgt - y, s)
    s = np.where(np.abs(y) <= tol, x, s)
    return np.mod(np.nan_to_num(s) / per, 1.0)


def _boundary_values(cfg: RunConfig, g: Grid) -> np.ndarray:
    b = cfg["boundary"]
    k = cfg.k
    amp = b["amplitude"]
    vals = np.zeros((k,) + g.shape)
    cx, cy = _domain_center(g)
    if b["preset"] == "two_phase":
        vals[0] = amp * np.maximum(g.x - cx, 0.0)
        vals[1] = amp * np.maximum(cx - g.x, 0.0)
    elif b["preset"] == "junction":
        order = b["order"]
        r = np.hypot(g.x - cx, g.y - cy)
        th = np.arctan2(g.y - cy, g.x - cx)
        phase = 0.5 * order * (th + b["theta0"])
        prof = amp * r ** (0.5 * order) * np.abs(np.cos(phase))
        lobe = np.mod(np.floor((phase + 0.5 * np.pi) / np.pi), order).astype(int)
        for i in range(k):
            vals[i] = np.where(lobe == i, prof, 0.0)
    elif b["preset"] == "arcs":
        s = boundary_parameter(g)
        for arc in b["arc"]:
            i = arc["density"] - 1
            on = (s >= arc["start"]) & (s <= arc["end"])
            if arc["profile"] == "sine":
                prof = np.sin(np.pi * (s - arc["start"]) / (arc["end"] - arc["start"]))
            else:
                prof = np.ones(g.shape)
            vals[i] = np.where(on, np.maximum(vals[i], arc["value"] * prof), vals[i])
    vals[:, ~g.boundary] = 0.0
    return vals


def _diffusion(entry, g: Grid) -> DiffusionCoeff:
    if isinstance(entry, dict):
        cx, cy = _domain_center(g)
        r2 = (g.x - cx) ** 2 + (g.y - cy) ** 2
        return DiffusionCoeff(1.0 + entry["amplitude"] * r2)
    return DiffusionCoeff(float(entry))


def build_problem(cfg: RunConfig, grid: Grid | None = None) -> Problem:
    g = build_grid_from(cfg) if grid is None else grid
    reactions = tuple(make_reaction(d["reaction"], **d["params"]) for d in cfg["density"])
    diffs = tuple(_diffusion(d["diffusion"], g) for d in cfg["density"])
    bd = BoundaryData(g, _boundary_values(cfg, g))
    pr = cfg["problem"]
    return Problem(g, reactions, diffs, bd, pr["segregation_tol"], pr["residual_tol"])


def build_options(cfg: RunConfig, seed: int | None = None) -> SolveOptions:
    s = cfg["solve"]
    return SolveOptions(
        tau=s["tau"],
        max_iters=s["max_iters"],
        energy_tol=s["energy_tol"],
        rng_seed=s["seed"] if seed is None else int(seed),
        init=s["init"],
        method=s["method"],
        sweeps=s["sweeps"],
    )
