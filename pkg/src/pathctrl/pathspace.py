"""Discrete path primitives: uniform time grids, piecewise-linear paths,
concatenation, sup-norms and the path pseudo-distance.

Continuous paths are represented by their values on a uniform grid and
evaluated everywhere through the piecewise-linear interpolant.  All types
are immutable and all operations are pure.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "Path",
    "Ensemble",
    "GridMismatchError",
    "concat",
    "sup_norm",
    "d_infinity",
    "interpolate",
    "constant_path",
    "path_to_csv",
    "path_from_csv",
]

_NODE_ATOL = 1e-10


class GridMismatchError(ValueError):
    """Raised when an operation requires compatible grids or shared nodes."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [t_start, t_end] into n_steps intervals."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"need t_start < t_end, got [{self.t_start}, {self.t_end}]")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    def node_index(self, s: float) -> int:
        """Index of the grid node equal to s, or raise GridMismatchError."""
        k = round((s - self.t_start) / self.dt)
        if k < 0 or k > self.n_steps or abs(self.t_start + k * self.dt - s) > _NODE_ATOL:
            raise GridMismatchError(f"{s} is not a node of {self}")
        return int(k)

    def contains(self, t: float) -> bool:
        return self.t_start - _NODE_ATOL <= t <= self.t_end + _NODE_ATOL


@dataclass(frozen=True)
class Path:
    """A d-dimensional path sampled on a uniform grid, values (n_steps+1, d)."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"values has {v.shape[0]} rows, grid has {self.grid.n_steps + 1} nodes"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, t: float) -> np.ndarray:
        """Piecewise-linear value at time t, constant beyond the endpoints."""
        nodes = self.grid.nodes
        t = float(np.clip(t, nodes[0], nodes[-1]))
        out = np.empty(self.dim)
        for i in range(self.dim):
            out[i] = np.interp(t, nodes, self.values[:, i])
        return out

    def stopped(self, s: float) -> "Path":
        """Path frozen at its value at time s from s onward."""
        k = self.grid.node_index(s)
        v = self.values.copy()
        v[k + 1 :] = v[k]
        return Path(self.grid, v)


@dataclass(frozen=True)
class Ensemble:
    """A batch of simulated paths on a shared grid.

    values has shape (n_paths, n_nodes, d); brownian_increments and
    control_values have shape (n_paths, n_steps, d).  girsanov_log_weights
    is zero for strong-mode simulations.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    brownian_increments: np.ndarray = field(repr=False)
    control_values: np.ndarray = field(repr=False)
    girsanov_log_weights: np.ndarray = field(repr=False)
    seed: int
    prefix_times: np.ndarray = field(repr=False, default=None)
    prefix_values: np.ndarray = field(repr=False, default=None)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def path(self, j: int) -> Path:
        return Path(self.grid, self.values[j])


def concat(x: Path, x_prime: Path, s: float) -> Path:
    """Concatenation of two paths at a shared node s.

    The result follows x up to s and x_prime shifted to be continuous at s
    afterwards: r -> x_prime(r) + x(s) - x_prime(s).
    """
    if abs(x.grid.dt - x_prime.grid.dt) > _NODE_ATOL:
        raise GridMismatchError("grids must share the step size")
    k = x.grid.node_index(s)
    kp = x_prime.grid.node_index(s)
    shift = x.values[k] - x_prime.values[kp]
    n_after = x_prime.grid.n_steps - kp
    out_grid = TimeGrid(x.grid.t_start, s + n_after * x.grid.dt, k + n_after)
    v = np.vstack([x.values[: k + 1], x_prime.values[kp + 1 :] + shift])
    return Path(out_grid, v)


def sup_norm(x: Path, s: float | None = None) -> float:
    """Max Euclidean norm of the path values over nodes up to s."""
    k = x.grid.n_steps if s is None else x.grid.node_index(s)
    return float(np.max(np.linalg.norm(x.values[: k + 1], axis=1)))


def _stopped_on_clock(x: Path, t: float, clock: np.ndarray) -> np.ndarray:
    """Values of the path stopped at t, constant-extended, on arbitrary times."""
    nodes = x.grid.nodes
    tq = np.minimum(clock, t)
    tq = np.clip(tq, nodes[0], nodes[-1])
    out = np.empty((len(clock), x.dim))
    for i in range(x.dim):
        out[:, i] = np.interp(tq, nodes, x.values[:, i])
    return out


def d_infinity(t1: float, x1: Path, t2: float, x2: Path) -> float:
    """Pseudo-distance sqrt|t2 - t1| + sup over nodes of the stopped paths' gap.

    Both paths are stopped at their respective times and constant-extended
    beyond their spans; the spatial sup runs over the union of grid nodes.
    """
    if not x1.grid.contains(t1) or not x2.grid.contains(t2):
        raise ValueError("times must lie within the paths' grids")
    clock = np.union1d(x1.grid.nodes, x2.grid.nodes)
    gap = _stopped_on_clock(x1, t1, clock) - _stopped_on_clock(x2, t2, clock)
    return float(np.sqrt(abs(t2 - t1)) + np.max(np.linalg.norm(gap, axis=1)))


def interpolate(x_points: np.ndarray, grid: TimeGrid) -> Path:
    """Piecewise-linear path through the given points at the grid nodes."""
    v = np.asarray(x_points, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != grid.n_steps + 1:
        raise ValueError(f"expected {grid.n_steps + 1} points, got {v.shape[0]}")
    return Path(grid, v)


def constant_path(x0: np.ndarray | float, grid: TimeGrid) -> Path:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return Path(grid, np.tile(x0, (grid.n_steps + 1, 1)))


def path_to_csv(x: Path) -> str:
    """Serialize a path: header t,x1,...,xd, one row per node."""
    buf = io.StringIO()
    buf.write("t," + ",".join(f"x{i + 1}" for i in range(x.dim)) + "\n")
    for t, row in zip(x.grid.nodes, x.values):
        buf.write(",".join(repr(float(u)) for u in (t, *row)) + "\n")
    return buf.getvalue()


def path_from_csv(text: str) -> Path:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    data = np.array(rows, dtype=float)
    t = data[:, 0]
    grid = TimeGrid(float(t[0]), float(t[-1]), len(t) - 1)
    return Path(grid, data[:, 1:])
