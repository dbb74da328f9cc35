"""
Brownian paths on explicit time grids, terminal conditions and path branching.

Batched internals work on arrays of shape (n_paths, n_nodes, d); the public
BrownianPath container stores one path as a (d, n_nodes) matrix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from . import parallel
from .errors import GridMismatch


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).ravel()
        if nodes.size < 2:
            raise ValueError("a time grid needs at least 2 nodes")
        if nodes[0] < 0.0:
            raise ValueError("time grid must start at t >= 0")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("time grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, t0: float, T: float, n_steps: int) -> "TimeGrid":
        return cls(np.linspace(t0, T, int(n_steps) + 1))

    @classmethod
    def graded(cls, t0: float, T: float, fine_step: float, fine_until: float, ratio: float = 1.25) -> "TimeGrid":
        """Uniform steps of fine_step on [t0, fine_until], then steps growing
        geometrically by `ratio` up to T. A last step shorter than half the
        previous one is merged into it."""
        if not (fine_step > 0.0 and ratio >= 1.0 and t0 < T):
            raise ValueError("graded grid needs fine_step > 0, ratio >= 1 and t0 < T")
        fine_until = min(max(fine_until, t0), T)
        k = int(round((fine_until - t0) / fine_step))
        nodes = list(t0 + fine_step * np.arange(k + 1))
        step = fine_step
        while nodes[-1] < T - 1e-12 * max(1.0, T):
            step *= ratio
            nodes.append(min(nodes[-1] + step, T))
        if len(nodes) > 2 and nodes[-1] - nodes[-2] < 0.5 * (nodes[-2] - nodes[-3]):
            nodes.pop(-2)
        nodes[-1] = T
        return cls(np.array(nodes))

    @property
    def start(self) -> float:
        return float(self.nodes[0])

    @property
    def end(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __len__(self) -> int:
        return self.nodes.size

    def _tol(self) -> float:
        return 1e-12 * max(1.0, abs(self.end))

    def has_node(self, t: float) -> bool:
        return bool(np.min(np.abs(self.nodes - t)) <= self._tol())

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[k] - t) > self._tol():
            raise GridMismatch(f"t = {t!r} is not a node of the time grid")
        return k

    def from_time(self, t: float) -> "TimeGrid":
        k = self.index_of(t)
        if k >= len(self) - 1:
            raise GridMismatch(f"t = {t!r} leaves no cell before the end of the grid")
        return TimeGrid(self.nodes[k:])

    def same_as(self, other: "TimeGrid") -> bool:
        return len(self) == len(other) and bool(np.all(self.nodes == other.nodes))


@dataclass(frozen=True, eq=False)
class BrownianPath:
    grid: TimeGrid
    values: np.ndarray  # (d, n_nodes)
    start_point: np.ndarray = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.shape[1] != len(self.grid):
            raise GridMismatch("path values do not match the grid length")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "start_point", vals[:, 0].copy())

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def points(self) -> np.ndarray:
        """Values as (n_nodes, d)."""
        return self.values.T

    @classmethod
    def from_points(cls, grid: TimeGrid, points) -> "BrownianPath":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return cls(grid, pts.T)

    @classmethod
    def frozen(cls, grid: TimeGrid, x) -> "BrownianPath":
        """Constant path equal to x at every node."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(grid, np.repeat(x[:, None], len(grid), axis=1))

    def shifted(self, dx) -> "BrownianPath":
        return BrownianPath(self.grid, self.values + np.asarray(dx, dtype=float).reshape(-1, 1))


# ---------------------------------------------------------------- batched core

def draw_increments(steps: np.ndarray, d: int, seed: int, stream: int, indices: Sequence[int]) -> np.ndarray:
    """Gaussian increments for the given path indices: shape (len(indices), n_steps, d)."""
    steps = np.asarray(steps, dtype=float)
    sq = np.sqrt(steps)[:, None]
    out = np.empty((len(indices), steps.size, d))
    for k, idx in enumerate(indices):
        out[k] = parallel.normals(seed, stream, idx, (steps.size, d)) * sq
    return out


def integrate_increments(start, increments: np.ndarray) -> np.ndarray:
    """Cumulative path values (P, n_steps + 1, d) from a start point and increments."""
    P, n, d = increments.shape
    start = np.broadcast_to(np.asarray(start, dtype=float), (P, d))
    vals = np.empty((P, n + 1, d))
    vals[:, 0, :] = start
    np.cumsum(increments, axis=1, out=vals[:, 1:, :])
    vals[:, 1:, :] += start[:, None, :]
    return vals


def simulate_batch(grid: TimeGrid, d: int, start, seed: int, indices, stream: int = parallel.PATHS) -> np.ndarray:
    inc = draw_increments(grid.steps, d, seed, stream, indices)
    return integrate_increments(start, inc)


def simulate_paths(grid: TimeGrid, d: int, start, count: int, seed: int) -> List[BrownianPath]:
    """Independent Brownian paths started at `start`; path i uses substream i."""
    if count < 1:
        raise ValueError("count must be >= 1")
    vals = simulate_batch(grid, d, start, seed, range(count))
    return [BrownianPath(grid, v.T) for v in vals]


def branch_paths(common: BrownianPath, branch_time: float, count: int, seed: int) -> List[Tuple[BrownianPath, BrownianPath]]:
    """Pairs that copy `common` up to branch_time and continue independently."""
    grid = common.grid
    b = grid.index_of(branch_time)
    steps = grid.steps[b:]
    base = common.points
    pairs = []
    for k in range(count):
        copies = []
        for c in range(2):
            pts = base.copy()
            if steps.size:
                inc = draw_increments(steps, common.d, seed, parallel.BRANCH, [2 * k + c])[0]
                pts[b + 1:] = base[b] + np.cumsum(inc, axis=0)
            copies.append(BrownianPath.from_points(grid, pts))
        pairs.append(tuple(copies))
    return pairs


def write_paths_csv(paths: Sequence[BrownianPath], target) -> None:
    """Long-format CSV: path_id, time, b1..bd."""
    d = paths[0].d
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", newline="") if own else target
    try:
        w = csv.writer(fh)
        w.writerow(["path_id", "time"] + [f"b{i + 1}" for i in range(d)])
        for pid, p in enumerate(paths):
            for t, row in zip(p.grid.nodes, p.points):
                w.writerow([pid, repr(float(t))] + [repr(float(v)) for v in row])
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------- terminal data

_KINDS = ("constant", "linear", "cosine", "gaussian_bump")


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal function phi with xi = phi(B_T).

    constant:       c
    linear:         a . x + c
    cosine:         amplitude * cos(freq . x)
    gaussian_bump:  amplitude * exp(-|x - center|^2 / (2 width^2))
    """

    kind: str
    c: float = 0.0
    a: tuple = ()
    freq: tuple = ()
    center: tuple = ()
    width: float = 1.0
    amplitude: float = 1.0
    holder_kappa: float = math.inf

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown terminal kind {self.kind!r}; expected one of {_KINDS}")
        for name in ("a", "freq", "center"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if self.kind == "gaussian_bump" and not self.width > 0.0:
            raise ValueError("gaussian_bump width must be > 0")

    @classmethod
    def constant(cls, c: float) -> "TerminalSpec":
        return cls("constant", c=float(c))

    @classmethod
    def linear(cls, a, c: float = 0.0) -> "TerminalSpec":
        return cls("linear", c=float(c), a=tuple(np.atleast_1d(a)))

    @classmethod
    def cosine(cls, freq, amplitude: float = 1.0) -> "TerminalSpec":
        return cls("cosine", freq=tuple(np.atleast_1d(freq)), amplitude=float(amplitude))

    @classmethod
    def gaussian_bump(cls, center, width: float = 1.0, amplitude: float = 1.0) -> "TerminalSpec":
        return cls("gaussian_bump", center=tuple(np.atleast_1d(center)), width=float(width), amplitude=float(amplitude))

    @classmethod
    def from_dict(cls, cfg: dict, d: int) -> "TerminalSpec":
        kind = cfg.get("kind", "gaussian_bump")
        if kind == "constant":
            return cls.constant(cfg.get("c", 1.0))
        if kind == "linear":
            return cls.linear(np.broadcast_to(cfg.get("a", 1.0), (d,)), cfg.get("c", 0.0))
        if kind == "cosine":
            return cls.cosine(np.broadcast_to(cfg.get("freq", 1.0), (d,)), cfg.get("amplitude", 1.0))
        if kind == "gaussian_bump":
            return cls.gaussian_bump(
                np.broadcast_to(cfg.get("center", 0.0), (d,)), cfg.get("width", 1.0), cfg.get("amplitude", 1.0)
            )
        raise ValueError(f"unknown terminal kind {kind!r}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("constant", "linear"):
            out["c"] = self.c
        if self.kind == "linear":
            out["a"] = list(self.a)
        if self.kind == "cosine":
            out.update(freq=list(self.freq), amplitude=self.amplitude)
        if self.kind == "gaussian_bump":
            out.update(center=list(self.center), width=self.width, amplitude=self.amplitude)
        return out

    def scaled(self, factor: float) -> "TerminalSpec":
        f = float(factor)
        if self.kind == "constant":
            return TerminalSpec.constant(f * self.c)
        if self.kind == "linear":
            return TerminalSpec.linear(np.asarray(self.a) * f, f * self.c)
        return TerminalSpec(self.kind, freq=self.freq, center=self.center, width=self.width,
                            amplitude=f * self.amplitude)


def terminal_eval(spec: TerminalSpec, x):
    """phi(x) and its gradient; x has the coordinates on the last axis."""
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    if spec.kind == "constant":
        return np.full(shape, spec.c), np.zeros_like(x)
    if spec.kind == "linear":
        a = np.asarray(spec.a)
        return x @ a + spec.c, np.broadcast_to(a, x.shape).copy()
    if spec.kind == "cosine":
        f = np.asarray(spec.freq)
        arg = x @ f
        return spec.amplitude * np.cos(arg), -spec.amplitude * np.sin(arg)[..., None] * f
    c = np.asarray(spec.center)
    diff = x - c
    val = spec.amplitude * np.exp(-0.5 * np.sum(diff * diff, axis=-1) / spec.width ** 2)
    return val, -val[..., None] * diff / spec.width ** 2


def heat_value(spec: TerminalSpec, x, tau):
    """E phi(x + sqrt(tau) N) in closed form (the zero-noise solution)."""
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if spec.kind in ("constant", "linear"):
        return terminal_eval(spec, x)[0] + 0.0 * tau
    if spec.kind == "cosine":
        f = np.asarray(spec.freq)
        return spec.amplitude * np.cos(x @ f) * np.exp(-0.5 * float(f @ f) * tau)
    d = x.shape[-1]
    w2 = spec.width ** 2
    diff = x - np.asarray(spec.center)
    r2 = np.sum(diff * diff, axis=-1)
    return spec.amplitude * (w2 / (w2 + tau)) ** (0.5 * d) * np.exp(-0.5 * r2 / (w2 + tau))
