"""
Sampling of the weighted fractional field and its mollified derivative.

W(t, x) = rho(x) S(t, x) where S is a fractional Brownian sheet drawn by a
tensor-product Cholesky map of an i.i.d. Gaussian array. Nodes at t = 0 or
x_i = 0 carry zero variance; they are pinned to zero and left out of the
factorization.

The mollified noise is

    Wdot(s, x) = int_0^s int phi_eta(s - r) p_eps(x - y) W(dr, y) dy,

with phi_eta = 1_[0, eta] / eta and p_eps the centered Gaussian density of
covariance eps * I. On the grid the time integral is the exact window average
(W(s) - W(max(s - eta, 0))) / eta and the space integral a kernel sum with
trapezoid cell weights, truncated at 4 standard deviations and renormalized.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import parallel
from .errors import DomainError, FactorizationError, OutOfDomain
from .model import ModelParams, r_h, rho_and_grad
from .paths import BrownianPath, TimeGrid

_TRUNC = 4.0


@dataclass(frozen=True)
class MollifierParams:
    eps: float
    eta: float

    def __post_init__(self):
        if not (self.eps > 0.0 and self.eta > 0.0):
            raise ValueError("mollifier eps and eta must be > 0")


@dataclass(frozen=True, eq=False)
class FieldSample:
    time_grid: TimeGrid
    space_grid: tuple  # d arrays of nodes
    values: np.ndarray  # (n_t, n_x1, ..., n_xd)
    factor_cache: tuple = ()  # (L_t, L_x1, ..., L_xd)
    _moll_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def d(self) -> int:
        return len(self.space_grid)

    def scaled_sum(self, other: "FieldSample", a: float = 1.0, b: float = 1.0) -> "FieldSample":
        """a * self + b * other on the shared grids."""
        return FieldSample(self.time_grid, self.space_grid, a * self.values + b * other.values, self.factor_cache)

    def zeros_like(self) -> "FieldSample":
        return FieldSample(self.time_grid, self.space_grid, np.zeros_like(self.values), self.factor_cache)


def uniform_space_grid(d: int, half_width: float, n: int) -> tuple:
    """d identical axes of n nodes on [-half_width, half_width]."""
    axis = np.linspace(-half_width, half_width, int(n))
    return tuple(axis.copy() for _ in range(d))


def _as_space_grid(space_grid, d: int) -> tuple:
    if isinstance(space_grid, np.ndarray) and space_grid.ndim == 1:
        space_grid = (space_grid,) * d
    axes = tuple(np.asarray(a, dtype=float) for a in space_grid)
    if len(axes) != d:
        raise ValueError(f"space grid has {len(axes)} axes, model has d = {d}")
    for a in axes:
        if a.size < 2 or np.any(np.diff(a) <= 0.0):
            raise ValueError("space axes need >= 2 strictly increasing nodes")
    return axes


def axis_factor(h: float, nodes) -> np.ndarray:
    """Lower factor L (n x m) with L L^T = [R_h(u_i, u_j)]; rows of zero nodes are 0."""
    nodes = np.asarray(nodes, dtype=float)
    live = nodes != 0.0
    u = nodes[live]
    C = r_h(h, u[:, None], u[None, :])
    L = None
    for jitter in (0.0, 1e-12 * np.trace(C) / max(1, u.size)):
        try:
            L = np.linalg.cholesky(C + jitter * np.eye(u.size))
            break
        except np.linalg.LinAlgError:
            continue
    if L is None:
        raise FactorizationError(f"axis covariance with h = {h} is not positive definite after jitter")
    full = np.zeros((nodes.size, u.size))
    full[live] = L
    return full


def _apply_axis(L: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(L, arr, axes=(1, axis)), 0, axis)


def sample_field(params: ModelParams, time_grid: TimeGrid, space_grid, count: int, seed: int,
                 first_index: int = 0) -> List[FieldSample]:
    """`count` independent realizations; realization r uses substream first_index + r."""
    axes = _as_space_grid(space_grid, params.d)
    factors = (axis_factor(params.h0, time_grid.nodes),) + tuple(
        axis_factor(h, a) for h, a in zip(params.hurst.h, axes))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    rho = rho_and_grad(params.weight, mesh)[0]
    shape = tuple(L.shape[1] for L in factors)
    out = []
    for r in range(count):
        z = parallel.normals(seed, parallel.FIELD, first_index + r, shape)
        for ax, L in enumerate(factors):
            z = _apply_axis(L, z, ax)
        out.append(FieldSample(time_grid, axes, rho * z, factors))
    return out


# ---------------------------------------------------------------- mollification

def _time_lag_matrix(nodes: np.ndarray, eta: float) -> np.ndarray:
    """Rows interpolate W at max(t_k - eta, 0) linearly between time nodes."""
    n = nodes.size
    T = np.zeros((n, n))
    for k, tk in enumerate(nodes):
        r = max(tk - eta, 0.0)
        if r < nodes[0]:
            if r == 0.0:
                continue  # W(0) = 0
            raise DomainError("mollifier window reaches before the field time grid")
        j = min(int(np.searchsorted(nodes, r, side="right")) - 1, n - 2)
        w = (r - nodes[j]) / (nodes[j + 1] - nodes[j])
        T[k, j] += 1.0 - w
        T[k, j + 1] += w
    return T


def time_window_matrix(nodes, eta: float) -> np.ndarray:
    """D with (D W)_k = (W(t_k) - W(max(t_k - eta, 0))) / eta."""
    nodes = np.asarray(nodes, dtype=float)
    return (np.eye(nodes.size) - _time_lag_matrix(nodes, eta)) / eta


def space_kernel_matrix(nodes, eps: float) -> np.ndarray:
    """Row j: weights of a Gaussian of variance eps centered at node j."""
    nodes = np.asarray(nodes, dtype=float)
    cw = np.zeros(nodes.size)
    dx = np.diff(nodes)
    cw[:-1] += 0.5 * dx
    cw[1:] += 0.5 * dx
    diff = nodes[:, None] - nodes[None, :]
    K = np.exp(-0.5 * diff * diff / eps) * cw[None, :]
    K[np.abs(diff) > _TRUNC * np.sqrt(eps)] = 0.0
    return K / K.sum(axis=1, keepdims=True)


def mollified_grid(field: FieldSample, moll: MollifierParams) -> np.ndarray:
    """Wdot_{eps,eta} at every grid node; cached on the sample."""
    key = (moll.eps, moll.eta)
    cached = field._moll_cache.get(key)
    if cached is not None:
        return cached
    M = _apply_axis(time_window_matrix(field.time_grid.nodes, moll.eta), field.values, 0)
    for ax, nodes in enumerate(field.space_grid):
        M = _apply_axis(space_kernel_matrix(nodes, moll.eps), M, ax + 1)
    M.setflags(write=False)
    field._moll_cache[key] = M
    return M


def _locate(nodes: np.ndarray, v: np.ndarray):
    j = np.clip(np.searchsorted(nodes, v, side="right") - 1, 0, nodes.size - 2)
    w = (v - nodes[j]) / (nodes[j + 1] - nodes[j])
    return j, w


def _check_inside(field: FieldSample, s, x):
    tn = field.time_grid.nodes
    tol = 1e-12 * max(1.0, abs(tn[-1]))
    if np.any(s < tn[0] - tol) or np.any(s > tn[-1] + tol):
        raise DomainError("evaluation time outside the field time span")
    for i, nodes in enumerate(field.space_grid):
        xi = x[..., i]
        if np.any(xi < nodes[0]) or np.any(xi > nodes[-1]):
            raise OutOfDomain(f"spatial coordinate {i} leaves the field grid [{nodes[0]}, {nodes[-1]}]")


def interpolate_grid(field: FieldSample, M: np.ndarray, s, x) -> np.ndarray:
    """Multilinear interpolation of grid data M at times s and points x."""
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_inside(field, s, x)
    shape = np.broadcast_shapes(s.shape, x.shape[:-1])
    locs = [_locate(field.time_grid.nodes, np.broadcast_to(s, shape))]
    for i, nodes in enumerate(field.space_grid):
        locs.append(_locate(nodes, np.broadcast_to(x[..., i], shape)))
    out = np.zeros(shape)
    for corner in itertools.product((0, 1), repeat=len(locs)):
        idx = tuple(j + c for (j, _), c in zip(locs, corner))
        wt = 1.0
        for (_, w), c in zip(locs, corner):
            wt = wt * (w if c else 1.0 - w)
        out = out + wt * M[idx]
    return out


def mollified_noise_eval(field: FieldSample, moll: MollifierParams, s, x):
    """Wdot_{eps,eta}(s, x); x has the coordinates on the last axis."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    val = interpolate_grid(field, mollified_grid(field, moll), s, x)
    return float(val) if val.ndim == 0 else val


def v_mollified_batch(field: FieldSample, moll: MollifierParams, nodes, values: np.ndarray) -> np.ndarray:
    """Trapezoid integral of Wdot along each path: values (P, n, d) on `nodes`."""
    nodes = np.asarray(nodes, dtype=float)
    vals = interpolate_grid(field, mollified_grid(field, moll), nodes[None, :], values)
    return np.trapezoid(vals, nodes, axis=-1)


def v_mollified(field: FieldSample, path: BrownianPath, t: float, moll: MollifierParams) -> float:
    """V^{eps,eta}_t = int_t^T Wdot(s, B_s) ds along `path`."""
    k = path.grid.index_of(t)
    nodes = path.grid.nodes[k:]
    return float(v_mollified_batch(field, moll, nodes, path.points[k:][None])[0])


# ---------------------------------------------------------------- exact discrete covariances

def _weights_1d(nodes: np.ndarray, v: np.ndarray) -> np.ndarray:
    j, w = _locate(nodes, v)
    G = np.zeros((v.size, nodes.size))
    rows = np.arange(v.size)
    G[rows, j] = 1.0 - w
    G[rows, j + 1] += w
    return G


def _functional_parts(params: ModelParams, field: FieldSample, moll: MollifierParams, s, x):
    """Time and space weight rows expressing Wdot(s_m, x_m) as linear forms of W."""
    if params.d != 1:
        raise NotImplementedError("exact discrete covariances are implemented for d = 1")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_inside(field, s, x[:, None])
    tn = field.time_grid.nodes
    xn = field.space_grid[0]
    ta = _weights_1d(tn, s) @ time_window_matrix(tn, moll.eta)
    sb = _weights_1d(xn, x) @ space_kernel_matrix(xn, moll.eps)
    rho = rho_and_grad(params.weight, xn[:, None])[0]
    return ta, sb * rho[None, :]


def _axis_cov(h, nodes):
    return r_h(h, nodes[:, None], nodes[None, :])


def mollified_noise_variance(params: ModelParams, field: FieldSample, moll: MollifierParams, s, x) -> float:
    """Exact variance of the discrete Wdot(s, x) under the model covariance (d = 1)."""
    ta, sb = _functional_parts(params, field, moll, s, x)
    Ct = _axis_cov(params.h0, field.time_grid.nodes)
    Cx = _axis_cov(params.hurst.h[0], field.space_grid[0])
    return float((ta @ Ct @ ta.T)[0, 0] * (sb @ Cx @ sb.T)[0, 0])


def mollified_variance(params: ModelParams, field: FieldSample, moll: MollifierParams,
                       path: BrownianPath, t: float) -> float:
    """Exact variance of the discrete V^{eps,eta}_t along `path` over field realizations (d = 1).

    V is a linear form sum A_kj S_kj of the sheet values, so Var V = tr(A^T C_t A C_x).
    """
    k = path.grid.index_of(t)
    nodes = path.grid.nodes[k:]
    pts = path.points[k:, 0]
    tau = np.zeros(nodes.size)
    dt = np.diff(nodes)
    tau[:-1] += 0.5 * dt
    tau[1:] += 0.5 * dt
    ta, sb = _functional_parts(params, field, moll, nodes, pts)
    A = ta.T @ (tau[:, None] * sb)
    Ct = _axis_cov(params.h0, field.time_grid.nodes)
    Cx = _axis_cov(params.hurst.h[0], field.space_grid[0])
    return float(np.sum(A * (Ct @ A @ Cx)))


def write_field_csv(field: FieldSample, target) -> None:
    """Long format: t, x1..xd, w."""
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", newline="") if own else target
    try:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(field.d)] + ["w"])
        for idx in np.ndindex(field.values.shape):
            t = field.time_grid.nodes[idx[0]]
            xs = [field.space_grid[i][idx[i + 1]] for i in range(field.d)]
            w.writerow([repr(float(v)) for v in [t, *xs, field.values[idx]]])
    finally:
        if own:
            fh.close()


def covers(field: FieldSample, lo: Sequence[float], hi: Sequence[float]) -> bool:
    return all(a[0] <= l and a[-1] >= h for a, l, h in zip(field.space_grid, lo, hi))
