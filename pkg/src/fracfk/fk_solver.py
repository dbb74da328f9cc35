"""
Feynman-Kac Monte Carlo for the solution pair (Y, Z).

Given the path, the noise functional V_t = int_t^T Wdot(s, B_s) ds is centered
Gaussian with variance Sigma(B), so the expectation over the field collapses:

    u(t, x)      = E[phi(x + B_{T-t}) exp(Sigma / 2)]
    grad u(t, x) = E[(grad phi + phi * g) exp(Sigma / 2)],   g = grad_x Sigma / 2,

and Y_t = u(t, B_t), Z_t = grad u(t, B_t). Only Brownian paths are sampled.

Second moments such as E[Y_t Y_s] use two path copies sharing their history up
to min(t, s); the field expectation of the product is again closed form. The
increment moments E|Y_t - Y_s|^2 are estimated with four coupled copies so
that the estimator variance vanishes as s -> t.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import parallel
from .gauss_moments import MomentInputs, bilinear_exp_moment, exp_moment, linear_exp_moment
from .model import ModelParams, as_points
from .paths import TerminalSpec, TimeGrid, draw_increments, integrate_increments, terminal_eval
from .quadrature import bridge_variance, cell_weights, midpoints, pair_sums


@dataclass(frozen=True)
class MCEstimate:
    mean: object
    std_error: object
    n: int
    seed: int

    @classmethod
    def from_samples(cls, samples, seed: int) -> "MCEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        if n < 2:
            raise ValueError("an estimate needs at least 2 samples")
        mean = np.mean(samples, axis=0)
        se = np.std(samples, axis=0, ddof=1) / np.sqrt(n)
        if mean.ndim == 0:
            mean, se = float(mean), float(se)
        return cls(mean, se, int(n), int(seed))

    def to_record(self, op: str, params_digest: str, t=None, s=None, x=None) -> dict:
        rec = {"op": op, "params_digest": params_digest, "t": t}
        if s is not None:
            rec["s"] = s
        if x is not None:
            rec["x"] = [float(v) for v in np.atleast_1d(x)]
        rec.update(
            mean=_jsonable(self.mean), std_error=_jsonable(self.std_error), n=self.n, seed=self.seed)
        return rec


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [float(a) for a in v.ravel()]
    return float(v)


@dataclass(frozen=True, eq=False)
class SolverConfig:
    n_paths: int
    grid: TimeGrid
    z_mode: str = "pathwise"
    fd_step: Optional[float] = None
    antithetic: bool = False
    threads: Optional[int] = None
    shard_size: int = parallel.DEFAULT_SHARD

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("n_paths must be >= 2")
        if self.z_mode not in ("pathwise", "finite_difference"):
            raise ValueError(f"unknown z_mode {self.z_mode!r}")
        if self.fd_step is not None and not self.fd_step > 0.0:
            raise ValueError("fd_step must be > 0")

    def n_samples(self) -> int:
        # with antithetic sampling every draw yields a mirrored pair
        return self.n_paths


def default_fd_step(x) -> float:
    return 1e-2 * (1.0 + float(np.linalg.norm(np.atleast_1d(x))))


# ---------------------------------------------------------------- single-start estimators

def _path_batch(sub: TimeGrid, d: int, x, seed: int, a: int, b: int, antithetic: bool):
    """Path values (k, P, n, d): k = 2 antithetic copies or 1."""
    inc = draw_increments(sub.steps, d, seed, parallel.PATHS, range(a, b))
    if antithetic:
        return np.stack([integrate_increments(x, inc), integrate_increments(x, -inc)])
    return integrate_increments(x, inc)[None]


def _u_terms(params, terminal, W, vals, grad):
    """phi(B_T) e^{Sigma/2} and, when grad, (grad phi + phi g) e^{Sigma/2}."""
    m = midpoints(vals)
    sig, g = pair_sums(params, W, m, m, grad=grad)[:2]
    phi, dphi = terminal_eval(terminal, vals[:, -1, :])
    u = phi * exp_moment(sig)
    if not grad:
        return u, None
    z = dphi * exp_moment(sig)[:, None] + phi[:, None] * linear_exp_moment(g, sig[:, None])
    return u, z


def _prepare(params: ModelParams, t: float, x, cfg: SolverConfig):
    params.check()
    sub = cfg.grid.from_time(t)
    W = cell_weights(params.h0, sub.nodes, sub.nodes)
    return sub, W, as_points(x, params.d)


def estimate_u(params: ModelParams, terminal: TerminalSpec, t: float, x, cfg: SolverConfig, seed: int) -> MCEstimate:
    """u(t, x) = E[phi(x + B_{T-t}) exp(Sigma/2)] over cfg.n_paths paths on the grid from t."""
    sub, W, x = _prepare(params, t, x, cfg)

    def shard(a, b):
        vals = _path_batch(sub, params.d, x, seed, a, b, cfg.antithetic)
        return np.mean([_u_terms(params, terminal, W, v, False)[0] for v in vals], axis=0)

    samples = parallel.map_shards(shard, cfg.n_samples(), cfg.threads, cfg.shard_size)
    return MCEstimate.from_samples(samples, seed)


def estimate_z(params: ModelParams, terminal: TerminalSpec, t: float, x, cfg: SolverConfig, seed: int) -> MCEstimate:
    """grad u(t, x), pathwise or by central differences with common paths."""
    sub, W, x = _prepare(params, t, x, cfg)
    d = params.d
    if cfg.z_mode == "pathwise":
        def shard(a, b):
            vals = _path_batch(sub, d, x, seed, a, b, cfg.antithetic)
            return np.mean([_u_terms(params, terminal, W, v, True)[1] for v in vals], axis=0)
    else:
        h = cfg.fd_step if cfg.fd_step is not None else default_fd_step(x)

        def shard(a, b):
            vals = _path_batch(sub, d, x, seed, a, b, cfg.antithetic)
            out = np.empty((vals.shape[1], d))
            for i in range(d):
                e = np.zeros(d)
                e[i] = h
                up = np.mean([_u_terms(params, terminal, W, v + e, False)[0] for v in vals], axis=0)
                dn = np.mean([_u_terms(params, terminal, W, v - e, False)[0] for v in vals], axis=0)
                out[:, i] = (up - dn) / (2.0 * h)
            return out

    samples = parallel.map_shards(shard, cfg.n_samples(), cfg.threads, cfg.shard_size)
    return MCEstimate.from_samples(samples, seed)


# ---------------------------------------------------------------- two-copy machinery

class _Copy:
    """One path copy restricted to [a, T]: midpoints, terminal data, self sums."""

    def __init__(self, params, terminal, Wfull, vals, ia, grad):
        self.ia = ia
        self.m = midpoints(vals[:, ia:, :])
        self.phi, self.dphi = terminal_eval(terminal, vals[:, -1, :])
        W = Wfull[ia:, ia:]
        self.sigma, self.g = pair_sums(params, W, self.m, self.m, grad=grad)[:2]


def _pair_term(params, Wfull, P: _Copy, Q: _Copy, target: str, nodes=None):
    """Field expectation of Y^P Y^Q (target y) or Z^P . Z^Q (target z) for each sample.

    The copies move independently on every cell pair, so the singular mixed
    factor is averaged over both bridge deviations from the interpolated
    midpoints when the grid nodes are given.
    """
    W = Wfull[P.ia:, Q.ia:]
    z = target == "z"
    bv = None if (nodes is None or not z) else bridge_variance(nodes[P.ia:], nodes[Q.ia:])
    cross = pair_sums(params, W, P.m, Q.m, grad=z, mixed=z, mixed_var=bv)
    var = P.sigma + Q.sigma + 2.0 * cross.sigma
    if not z:
        return P.phi * Q.phi * exp_moment(var)
    cP = P.g + cross.grad_x
    cQ = Q.g + cross.grad_y
    e = exp_moment(var)
    out = e * np.sum(P.dphi * Q.dphi, axis=-1)
    out += Q.phi * np.sum(P.dphi * linear_exp_moment(cQ, var[:, None]), axis=-1)
    out += P.phi * np.sum(Q.dphi * linear_exp_moment(cP, var[:, None]), axis=-1)
    # sum over coordinates of Cov(X^P_i, X^Q_i) + Cov(X^P_i, Y) Cov(X^Q_i, Y)
    contracted = MomentInputs(var, np.sum(cP * cQ, axis=-1), 1.0, cross.mixed)
    out += P.phi * Q.phi * bilinear_exp_moment(contracted)
    return out


def _branch(base, inc, k):
    """base up to node k, then base[k] + cumulative sum of inc from node k."""
    out = base.copy()
    out[:, k + 1:, :] = base[:, k:k + 1, :] + np.cumsum(inc[:, k:, :], axis=1)
    return out


def _coupled_paths(grid: TimeGrid, d: int, x, seed: int, a: int, b: int, it: int, js: int):
    """Base path B and branches A, C (at t) and Bs, D (at s) for samples a..b."""
    steps = grid.steps
    base = integrate_increments(x, draw_increments(steps, d, seed, parallel.PATHS, range(a, b)))
    wa = draw_increments(steps, d, seed, parallel.BRANCH, range(2 * a, 2 * b, 2))
    wc = draw_increments(steps, d, seed, parallel.BRANCH, range(2 * a + 1, 2 * b, 2))
    return (_branch(base, wa, it), _branch(base, wc, it), _branch(base, wa, js), _branch(base, wc, js))


def _check_pair_times(cfg: SolverConfig, t: float, s: float):
    grid = cfg.grid
    it, js = grid.index_of(t), grid.index_of(s)
    if max(it, js) >= len(grid) - 1:
        raise ValueError("t and s must lie strictly before T")
    return it, js


def _second_moment(params, terminal, t, s, cfg, seed, x, target):
    params.check()
    x = as_points(0.0 if x is None else x, params.d)
    it, js = _check_pair_times(cfg, t, s)
    lo, hi = min(it, js), max(it, js)
    grid = cfg.grid
    Wfull = cell_weights(params.h0, grid.nodes, grid.nodes)
    z = target == "z"

    def shard(a, b):
        A, C, Bs, D = _coupled_paths(grid, params.d, x, seed, a, b, lo, hi)
        P = _Copy(params, terminal, Wfull, A, lo, z)
        Q = _Copy(params, terminal, Wfull, D if hi != lo else C, hi, z)
        return _pair_term(params, Wfull, P, Q, target, grid.nodes)

    samples = parallel.map_shards(shard, cfg.n_paths, cfg.threads, cfg.shard_size)
    return MCEstimate.from_samples(samples, seed)


def structure_moment_y(params, terminal, t, s, cfg: SolverConfig, seed: int, x=None) -> MCEstimate:
    """E[Y_t Y_s] for paths started at x (default 0) at the first grid node."""
    return _second_moment(params, terminal, t, s, cfg, seed, x, "y")


def structure_moment_z(params, terminal, t, s, cfg: SolverConfig, seed: int, x=None) -> MCEstimate:
    """E[Z_t . Z_s] for paths started at x (default 0) at the first grid node."""
    return _second_moment(params, terminal, t, s, cfg, seed, x, "z")


def structure_increment(params, terminal, t, s, cfg: SolverConfig, seed: int, target: str = "y", x=None) -> MCEstimate:
    """E|X_t - X_s|^2 for X = Y or Z, from four coupled copies.

    Copies A, C branch from the base path at t; Bs, D at s, with A and Bs (and
    C and D) sharing their increments after the later branch. Each sample is
    f(A, C) + f(Bs, D) - f(A, D) - f(C, Bs), an unbiased estimate of
    E[X_t^2] + E[X_s^2] - 2 E[X_t X_s] that vanishes identically when s = t.
    """
    if target not in ("y", "z"):
        raise ValueError("target must be 'y' or 'z'")
    params.check()
    x = as_points(0.0 if x is None else x, params.d)
    it, js = _check_pair_times(cfg, t, s)
    if it == js:
        return MCEstimate(0.0, 0.0, cfg.n_paths, int(seed))
    lo, hi = min(it, js), max(it, js)
    grid = cfg.grid
    Wfull = cell_weights(params.h0, grid.nodes, grid.nodes)
    z = target == "z"

    def shard(a, b):
        A, C, Bs, D = _coupled_paths(grid, params.d, x, seed, a, b, lo, hi)
        cA = _Copy(params, terminal, Wfull, A, lo, z)
        cC = _Copy(params, terminal, Wfull, C, lo, z)
        cB = _Copy(params, terminal, Wfull, Bs, hi, z)
        cD = _Copy(params, terminal, Wfull, D, hi, z)
        nd = grid.nodes
        return (_pair_term(params, Wfull, cA, cC, target, nd) + _pair_term(params, Wfull, cB, cD, target, nd)
                - _pair_term(params, Wfull, cA, cD, target, nd) - _pair_term(params, Wfull, cC, cB, target, nd))

    samples = parallel.map_shards(shard, cfg.n_paths, cfg.threads, cfg.shard_size)
    return MCEstimate.from_samples(samples, seed)
