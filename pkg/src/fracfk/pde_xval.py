"""
Finite-difference cross-check of the Feynman-Kac representation in d = 1.

Solves the backward equation

    -du = (1/2) u_xx dt + u Wdot_{eps,eta}(t, x) dt,   u(T, .) = phi,

for one field realization on [-L, L] with Dirichlet data taken from the
zero-noise heat flow of phi, and compares it with an inner Monte Carlo of
E[phi(x + B_{T-t}) exp(int_t^T Wdot(s, x + B_{s-t}) ds)] on the same field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from . import parallel
from .errors import DomainError, StabilityError
from .field_sim import FieldSample, MollifierParams, interpolate_grid, mollified_grid, v_mollified_batch
from .fk_solver import MCEstimate
from .model import ModelParams
from .paths import TerminalSpec, TimeGrid, heat_value, simulate_batch, terminal_eval


@dataclass(frozen=True, eq=False)
class PdeGrid:
    t_nodes: np.ndarray
    x_nodes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_nodes, dtype=float)
        x = np.asarray(self.x_nodes, dtype=float)
        for name, a in (("time", t), ("space", x)):
            if a.size < 3 or not np.allclose(np.diff(a), a[1] - a[0], rtol=1e-9, atol=0.0) or a[1] <= a[0]:
                raise ValueError(f"{name} nodes must be uniform and increasing with >= 3 nodes")
        object.__setattr__(self, "t_nodes", t)
        object.__setattr__(self, "x_nodes", x)

    @classmethod
    def uniform(cls, T: float, n_t: int, n_x: int, half_width: float, t0: float = 0.0) -> "PdeGrid":
        """n_t time steps and n_x space intervals on [t0, T] x [-half_width, half_width]."""
        return cls(np.linspace(t0, T, n_t + 1), np.linspace(-half_width, half_width, n_x + 1))

    @classmethod
    def reference(cls, T: float, n: int = 200, x_probe: float = 0.0) -> "PdeGrid":
        return cls.uniform(T, n, n, 4.0 * np.sqrt(T) + abs(x_probe))

    @property
    def dt(self) -> float:
        return float(self.t_nodes[1] - self.t_nodes[0])

    @property
    def dx(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def half_width(self) -> float:
        return float(max(-self.x_nodes[0], self.x_nodes[-1]))

    def t_index(self, t: float) -> int:
        k = int(round((t - self.t_nodes[0]) / self.dt))
        if not (0 <= k < self.t_nodes.size) or abs(self.t_nodes[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"t = {t!r} is not a node of the PDE grid")
        return k


def potential(field: FieldSample, moll: MollifierParams, grid: PdeGrid) -> np.ndarray:
    """Wdot_{eps,eta} on the PDE grid nodes: (n_t, n_x)."""
    M = mollified_grid(field, moll)
    t = grid.t_nodes[:, None]
    x = np.broadcast_to(grid.x_nodes[None, :], (t.shape[0], grid.x_nodes.size))[..., None]
    return interpolate_grid(field, M, t, x)


def _potential_mid(field, moll, grid):
    M = mollified_grid(field, moll)
    tm = 0.5 * (grid.t_nodes[:-1] + grid.t_nodes[1:])[:, None]
    x = np.broadcast_to(grid.x_nodes[None, :], (tm.shape[0], grid.x_nodes.size))[..., None]
    return interpolate_grid(field, M, tm, x)


def solve_mollified_pde(params: ModelParams, terminal: TerminalSpec, field: Optional[FieldSample],
                        moll: MollifierParams, grid: PdeGrid, scheme: str = "crank_nicolson") -> np.ndarray:
    """u on every grid node, shape (n_t + 1, n_x + 1); row k is time t_nodes[k].

    field None means the zero field. Explicit stepping requires
    dt <= dx^2 / 2; both schemes require max|Wdot| dt < 1.
    """
    if params.d != 1:
        raise ValueError("the finite-difference solver is one-dimensional")
    if scheme not in ("explicit", "crank_nicolson"):
        raise ValueError(f"unknown scheme {scheme!r}")
    dt, dx = grid.dt, grid.dx
    nt, nx = grid.t_nodes.size, grid.x_nodes.size
    x = grid.x_nodes
    if scheme == "explicit" and dt > 0.5 * dx * dx:
        raise StabilityError(f"explicit scheme needs dt <= dx^2/2 ({dt:.3g} > {0.5 * dx * dx:.3g})")
    if field is None:
        V = np.zeros((nt, nx))
        Vm = np.zeros((nt - 1, nx))
    else:
        V = potential(field, moll, grid)
        Vm = _potential_mid(field, moll, grid)
    vmax = float(np.max(np.abs(Vm if scheme == "crank_nicolson" else V)))
    if vmax * dt >= 1.0:
        raise StabilityError(f"potential too large for the time step: max|Wdot| dt = {vmax * dt:.3g}")

    T = grid.t_nodes[-1]
    u = np.empty((nt, nx))
    u[-1] = terminal_eval(terminal, x[:, None])[0]
    bc = np.stack([heat_value(terminal, np.array([[x[0]], [x[-1]]]), T - t) for t in grid.t_nodes])
    lam = 0.5 * dt / (dx * dx)
    inner = slice(1, nx - 1)
    for k in range(nt - 2, -1, -1):
        nxt = u[k + 1]
        lap = nxt[:-2] - 2.0 * nxt[1:-1] + nxt[2:]
        new = np.empty(nx)
        new[0], new[-1] = bc[k]
        if scheme == "explicit":
            new[inner] = nxt[1:-1] + lam * lap + dt * V[k + 1, inner] * nxt[1:-1]
        else:
            pot = Vm[k, inner]
            rhs = nxt[1:-1] + 0.5 * lam * lap + 0.5 * dt * pot * nxt[1:-1]
            rhs[0] += 0.5 * lam * new[0]
            rhs[-1] += 0.5 * lam * new[-1]
            m = nx - 2
            ab = np.zeros((3, m))
            ab[0, 1:] = -0.5 * lam
            ab[1] = 1.0 + lam - 0.5 * dt * pot
            ab[2, :-1] = -0.5 * lam
            new[inner] = solve_banded((1, 1), ab, rhs)
        u[k] = new
    return u


def interpolate_solution(grid: PdeGrid, u: np.ndarray, t: float, x: float):
    """u(t, x) and u_x(t, x) by linear interpolation in x at a time node t."""
    k = grid.t_index(t)
    xs = grid.x_nodes
    if not (xs[0] <= x <= xs[-1]):
        raise DomainError("x outside the PDE grid")
    j = min(int((x - xs[0]) / grid.dx), xs.size - 2)
    w = (x - xs[j]) / grid.dx
    val = (1 - w) * u[k, j] + w * u[k, j + 1]
    jc = min(max(j, 1), xs.size - 2)
    grad = (u[k, jc + 1] - u[k, jc - 1]) / (2.0 * grid.dx)
    return float(val), np.array([grad])


# ---------------------------------------------------------------- comparisons

@dataclass(frozen=True)
class ProbeResult:
    t: float
    x: float
    fd: float
    mc: MCEstimate

    @property
    def abs_error(self) -> float:
        return abs(self.fd - self.mc.mean)

    @property
    def rel_error(self) -> float:
        return self.abs_error / abs(self.mc.mean) if self.mc.mean != 0.0 else float("inf")

    def passes(self, k_se: float = 3.0, rel_allowance: float = 0.02) -> bool:
        return self.abs_error <= k_se * self.mc.std_error + rel_allowance * abs(self.fd)


def default_probes(T: float):
    return [(t, x) for t in (0.0, 0.5 * T) for x in (-0.5, 0.0, 0.5)]


def inner_mc(params, terminal, field, moll, t, x, n_paths, seed, time_nodes, threads=None) -> MCEstimate:
    """E[phi(x + B_{T-t}) exp(int_t^T Wdot(s, x + B_{s-t}) ds)] for this field realization."""
    nodes = np.asarray(time_nodes)
    nodes = nodes[nodes >= t - 1e-12]
    sub = TimeGrid(nodes)

    def shard(a, b):
        if field is None:
            vals = simulate_batch(sub, 1, [x], seed, range(a, b))
            return terminal_eval(terminal, vals[:, -1, :])[0]
        vals = simulate_batch(sub, 1, [x], seed, range(a, b))
        v = v_mollified_batch(field, moll, sub.nodes, vals)
        return terminal_eval(terminal, vals[:, -1, :])[0] * np.exp(v)

    return MCEstimate.from_samples(parallel.map_shards(shard, n_paths, threads, 1024), seed)


def compare_fk(params: ModelParams, terminal: TerminalSpec, field: Optional[FieldSample], moll: MollifierParams,
               grid: PdeGrid, n_inner_paths: int, seed: int, probes: Optional[Sequence] = None,
               scheme: str = "crank_nicolson", u: Optional[np.ndarray] = None, threads=None) -> List[ProbeResult]:
    """FD value against the inner Monte Carlo at each probe (t, x).

    Inner paths use the PDE time nodes, so both sides see the same potential.
    """
    if u is None:
        u = solve_mollified_pde(params, terminal, field, moll, grid, scheme)
    probes = default_probes(grid.t_nodes[-1]) if probes is None else probes
    out = []
    for t, x in probes:
        fd = interpolate_solution(grid, u, t, x)[0]
        mc = inner_mc(params, terminal, field, moll, t, x, n_inner_paths, seed, grid.t_nodes, threads)
        out.append(ProbeResult(float(t), float(x), fd, mc))
    return out


# ---------------------------------------------------------------- mild form

def _heat_against_linear(xs: np.ndarray, f: np.ndarray, x: float, tau: float) -> float:
    """int p_tau(x - y) f(y) dy for f piecewise linear on xs (zero outside), exact."""
    if tau <= 0.0:
        if x < xs[0] or x > xs[-1]:
            return 0.0
        return float(np.interp(x, xs, f))
    sd = np.sqrt(tau)
    a, b = xs[:-1], xs[1:]
    fa, fb = f[:-1], f[1:]
    slope = (fb - fa) / (b - a)
    za, zb = (a - x) / sd, (b - x) / sd
    mass = ndtr(zb) - ndtr(za)
    # int_a^b (y - x) p dy = sd * (pdf(za) - pdf(zb))
    pdf = lambda z: np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    first = sd * (pdf(za) - pdf(zb))
    # f(y) = fa + slope (y - a) = fa + slope (x - a) + slope (y - x)
    return float(np.sum((fa + slope * (x - a)) * mass + slope * first))


def mild_form_residual(params: ModelParams, terminal: TerminalSpec, field: Optional[FieldSample],
                       moll: MollifierParams, grid: PdeGrid, u: np.ndarray,
                       probes: Optional[Sequence] = None) -> float:
    """max over probes of |u(t,x) - P_{T-t} phi(x) - int_t^T int p_{s-t}(x-y) u(s,y) Wdot(s,y) dy ds|.

    P is the heat semigroup (closed form for the built-in terminals); the space
    integral is exact against the piecewise-linear interpolant of u Wdot on the
    grid and the time integral uses the trapezoid rule on the grid times.
    """
    probes = default_probes(grid.t_nodes[-1]) if probes is None else probes
    V = np.zeros_like(u) if field is None else potential(field, moll, grid)
    f = u * V
    T = grid.t_nodes[-1]
    worst = 0.0
    for t, x in probes:
        k = grid.t_index(t)
        times = grid.t_nodes[k:]
        vals = np.array([_heat_against_linear(grid.x_nodes, f[k + j], x, s - t) for j, s in enumerate(times)])
        duhamel = float(np.sum(0.5 * np.diff(times) * (vals[:-1] + vals[1:]))) if times.size > 1 else 0.0
        ux = interpolate_solution(grid, u, t, x)[0]
        heat = float(heat_value(terminal, np.array([[x]]), T - t)[0])
        worst = max(worst, abs(ux - heat - duhamel))
    return worst


def write_solution_csv(grid: PdeGrid, u: np.ndarray, target) -> None:
    import csv
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", newline="") if own else target
    try:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        for k, t in enumerate(grid.t_nodes):
            for j, x in enumerate(grid.x_nodes):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(u[k, j]))])
    finally:
        if own:
            fh.close()
