"""Field tables, run manifests and partition images."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GridMismatchError
from .freeboundary import NodalReport, label_map
from .grid import Grid
from .segregation import State

__all__ = [
    "write_fields",
    "read_fields",
    "write_json",
    "read_json",
    "PALETTE",
    "BACKGROUND",
    "OUTSIDE",
    "partition_image",
    "render_partition",
    "write_ppm",
    "read_ppm",
]


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------


def write_fields(sol, path) -> Path:
    """Write ``x,y,u_1,...,u_k`` rows for every node in row-major order.

    Values use 17 significant digits, so reading back is exact.
    """
    s = sol.state if hasattr(sol, "state") else sol
    g = s.grid
    path = Path(path)
    header = ",".join(["x", "y"] + [f"u_{i + 1}" for i in range(s.k)])
    cols = [g.x.ravel(), g.y.ravel()] + [s.u[i].ravel() for i in range(s.k)]
    table = np.column_stack(cols)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            np.savetxt(fh, table, fmt="%.17g", delimiter=",")
    except OSError as exc:
        raise OSError(f"cannot write fields to {path}: {exc}") from exc
    return path


def read_fields(path, grid: Grid) -> State:
    """Read a table written by :func:`write_fields` back onto ``grid``."""
    path = Path(path)
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise OSError(f"cannot read fields from {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed field table: {exc}") from None
    k = len(header) - 2
    expect = ["x", "y"] + [f"u_{i + 1}" for i in range(k)]
    if k < 1 or header != expect:
        raise ConfigurationError(f"{path}: header {header} is not x,y,u_1,...,u_k")
    n = grid.nx * grid.ny
    if data.shape != (n, k + 2):
        raise GridMismatchError(f"{path}: {data.shape[0]} rows for a grid of {n} nodes")
    tol = 1e-9 * grid.h
    if np.max(np.abs(data[:, 0] - grid.x.ravel())) > tol or np.max(np.abs(data[:, 1] - grid.y.ravel())) > tol:
        raise GridMismatchError(f"{path}: node coordinates do not match the grid")
    u = data[:, 2:].T.reshape((k,) + grid.shape)
    return State(grid, u)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(obj, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# images
# --------------------------------------------------------------------------

#: base colour of density ``i`` is ``PALETTE[i % len(PALETTE)]``
PALETTE = np.array(
    [
        (220, 40, 40),
        (40, 170, 60),
        (40, 80, 220),
        (230, 160, 20),
        (150, 60, 190),
        (20, 170, 180),
        (200, 90, 150),
        (120, 120, 40),
    ],
    dtype=float,
)
BACKGROUND = (200, 200, 200)
OUTSIDE = (64, 64, 64)
INTERFACE = (0, 0, 0)
MARKER = (255, 255, 255)


def partition_image(sol, report: NodalReport | None = None) -> np.ndarray:
    """RGB array ``(ny, nx, 3)`` with one pixel per node, top row = largest y.

    Density ``i`` is drawn in its palette colour scaled by
    ``0.35 + 0.65 u_i / max u_i``; nodes where all densities vanish get
    :data:`BACKGROUND`, masked-out nodes :data:`OUTSIDE`.  Interface points
    are overdrawn black and multiple points as white 3x3 squares.
    """
    s = sol.state if hasattr(sol, "state") else sol
    g = s.grid
    lab = label_map(s)
    img = np.zeros(g.shape + (3,))
    img[...] = BACKGROUND
    img[lab == -2] = OUTSIDE
    for i in range(s.k):
        on = lab == i
        if not on.any():
            continue
        peak = float(s.u[i][on].max())
        inten = 0.35 + 0.65 * s.u[i] / peak
        img[on] = PALETTE[i % len(PALETTE)][None, :] * inten[on][:, None]
    if report is not None:
        for iface in report.interfaces:
            cols = np.rint((iface.points[:, 0] - g.origin[0]) / g.h).astype(int)
            rows = np.rint((iface.points[:, 1] - g.origin[1]) / g.h).astype(int)
            ok = (rows >= 0) & (rows < g.ny) & (cols >= 0) & (cols < g.nx)
            img[rows[ok], cols[ok]] = INTERFACE
        for mp in report.multiple_points:
            j, i = g.nearest_node(mp.location)
            img[max(j - 1, 0) : j + 2, max(i - 1, 0) : i + 2] = MARKER
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)[::-1]


def write_ppm(img: np.ndarray, path) -> Path:
    """Binary PPM: ASCII header ``P6\\n<width> <height>\\n255\\n`` then RGB bytes row by row, top to bottom."""
    path = Path(path)
    img = np.ascontiguousarray(img, dtype=np.uint8)
    hgt, wid = img.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{wid} {hgt}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write image to {path}: {exc}") from exc
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError(f"{path}: not a binary PPM")
    wid, hgt = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError(f"{path}: unsupported max value")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(hgt, wid, 3)


def render_partition(sol, report: NodalReport | None, path) -> Path:
    return write_ppm(partition_image(sol, report), path)
