"""
Statistical and structural checks built on the estimators.

holder_fit          log-log slope of a structure series with a propagated CI
structure_series    E|X_{t0+lag} - X_{t0}|^2 over a set of lags, X = Y or Z
bsde_residual       pathwise residual of the backward equation with mollified noise
isometry_check      second moment of int f(s) Wdot(s, B_s) ds versus quadrature
alpha_identity_check  exp(K_t) against 1 + sum exp(K_{r_i}) (K_{r_{i+1}} - K_{r_i})
exp_tail_probe      E exp(lambda V_t) = E exp(lambda^2 Sigma / 2)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import parallel
from .errors import DegenerateSeries, DomainError, GridMismatch
from .field_sim import (FieldSample, MollifierParams, mollified_grid, mollified_variance, interpolate_grid,
                        sample_field, uniform_space_grid, v_mollified_batch)
from .fk_solver import MCEstimate, SolverConfig, default_fd_step, structure_increment
from .gauss_moments import exp_moment
from .model import ModelParams, as_points
from .paths import (BrownianPath, TerminalSpec, TimeGrid, draw_increments, integrate_increments,
                    simulate_batch, terminal_eval)
from .quadrature import cell_weights, midpoints, pair_sums

_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def derived_seed(seed: int, k: int) -> int:
    """Distinct, reproducible seed for the k-th sub-experiment."""
    return (int(seed) + (k + 1) * _GOLDEN) & _MASK64


# ---------------------------------------------------------------- Hölder fits

@dataclass(frozen=True)
class StructureSeries:
    lags: tuple
    moments: tuple
    order: float = 2.0

    def __post_init__(self):
        lags = tuple(float(v) for v in self.lags)
        if any(v <= 0.0 for v in lags) or any(b <= a for a, b in zip(lags, lags[1:])):
            raise ValueError("lags must be positive and increasing")
        if len(lags) != len(self.moments):
            raise ValueError("one moment per lag")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "moments", tuple(self.moments))

    def rows(self):
        return [(lag, m.mean, m.std_error, m.n) for lag, m in zip(self.lags, self.moments)]


@dataclass(frozen=True)
class HolderFit:
    exponent: float
    ci: tuple
    std_error: float
    intercept: float


def holder_fit(series: StructureSeries, level: float = 1.96) -> HolderFit:
    """Least-squares slope of log moment against log lag.

    The slope's variance propagates each moment's standard error through
    d log m = dm / m, treating lags as independent.
    """
    if len(series.lags) < 4:
        raise DegenerateSeries("a Hölder fit needs at least 4 lags")
    means = np.array([m.mean for m in series.moments], dtype=float)
    if np.any(~(means > 0.0)):
        raise DegenerateSeries("all moment means must be > 0 for a log-log fit")
    ses = np.array([m.std_error for m in series.moments], dtype=float)
    x = np.log(np.asarray(series.lags))
    y = np.log(means)
    xc = x - x.mean()
    c = xc / np.sum(xc * xc)
    slope = float(np.sum(c * (y - y.mean())))
    intercept = float(y.mean() - slope * x.mean())
    se = float(np.sqrt(np.sum((c * ses / means) ** 2)))
    return HolderFit(slope, (slope - level * se, slope + level * se), se, intercept)


def lag_grid(t0: float, lag: float, T: float, fine_div: int = 8, ratio: float = 1.25) -> TimeGrid:
    """Steps of lag / fine_div on [t0, t0 + 2 lag], geometric growth after.

    Every lag then sees the same relative resolution around both branch
    times, so discretization bias is close to a constant factor across lags
    and drops out of the log-log slope.
    """
    return TimeGrid.graded(t0, T, lag / fine_div, t0 + 2.0 * lag, ratio)


def structure_series(params: ModelParams, terminal: TerminalSpec, target: str, lags: Sequence[float],
                     cfg: SolverConfig, seed: int, t0: float = 0.0, x=None, grid: str = "graded",
                     fine_div: int = 8) -> StructureSeries:
    """E|X_{t0 + lag} - X_{t0}|^2 for each lag, each lag with its own seed.

    grid "graded" builds lag_grid(t0, lag, T) per lag (T = cfg.grid.end);
    "fixed" uses cfg.grid, which must then contain t0 and every t0 + lag.
    """
    if grid not in ("graded", "fixed"):
        raise ValueError("grid must be 'graded' or 'fixed'")
    moments = []
    for k, lag in enumerate(lags):
        sub = cfg
        if grid == "graded":
            g = lag_grid(t0, lag, cfg.grid.end, fine_div)
            sub = SolverConfig(cfg.n_paths, g, cfg.z_mode, cfg.fd_step, cfg.antithetic, cfg.threads, cfg.shard_size)
        moments.append(structure_increment(params, terminal, t0, t0 + lag, sub, derived_seed(seed, k), target, x))
    return StructureSeries(tuple(lags), tuple(moments), 2.0)


# ---------------------------------------------------------------- BSDE residual

@dataclass(frozen=True)
class ResidualReport:
    rms: MCEstimate
    residuals: np.ndarray = field(repr=False)
    n_steps: int = 0


def _inner_u(params, terminal, field_s, moll, nodes, x, inc, h):
    """Inner MC of u and a CRN central difference at start x with shared increments.

    inc: (n, n_steps, d) antithetic-free increments; the antithetic copy is -inc.
    Returns (u, z) averaged over the 2n paths.
    """
    d = params.d

    def mean_value(start):
        tot = 0.0
        for sgn in (1.0, -1.0):
            vals = integrate_increments(start, sgn * inc)
            v = v_mollified_batch(field_s, moll, nodes, vals)
            phi = terminal_eval(terminal, vals[:, -1, :])[0]
            tot = tot + np.mean(phi * np.exp(v))
        return 0.5 * tot

    u = mean_value(x)
    z = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        z[i] = (mean_value(x + e) - mean_value(x - e)) / (2.0 * h)
    return u, z


def bsde_residual(params: ModelParams, terminal: TerminalSpec, field_s: FieldSample, moll: MollifierParams,
                  cfg: SolverConfig, seed: int, n_inner: int = 200, method: str = "double_mc",
                  x=None, pde_solution=None) -> ResidualReport:
    """Residual R = Y_0 - xi - int Y Wdot ds + int Z dB along cfg.n_paths outer paths.

    Y_k and Z_k at the outer nodes come from an inner Monte Carlo on the field's
    own time grid for this realization (method "double_mc"), or from a
    finite-difference solution (method "pde", d = 1, pass pde_solution as
    (PdeGrid, u array)). The outer integrals use the trapezoid rule for the
    ds integral and left points for the dB integral.
    """
    params.check()
    grid = cfg.grid
    fnodes = field_s.time_grid.nodes
    for t in grid.nodes:
        if not field_s.time_grid.has_node(t):
            raise GridMismatch("outer grid nodes must be nodes of the field time grid")
    d = params.d
    x0 = as_points(0.0 if x is None else x, d)
    outer = simulate_batch(grid, d, x0, seed, range(cfg.n_paths), stream=parallel.OUTER)
    n = len(grid)
    M = mollified_grid(field_s, moll)
    if method == "pde":
        from .pde_xval import interpolate_solution
        pgrid, usol = pde_solution

    res = np.empty(cfg.n_paths)
    for o in range(cfg.n_paths):
        path = outer[o]
        Y = np.empty(n)
        Z = np.empty((n, d))
        for k in range(n):
            t = grid.nodes[k]
            xk = path[k]
            if k == n - 1:
                Y[k], Z[k] = terminal_eval(terminal, xk[None])[0][0], terminal_eval(terminal, xk[None])[1][0]
                continue
            if method == "pde":
                Y[k], Z[k] = interpolate_solution(pgrid, usol, t, xk[0])
                continue
            k0 = field_s.time_grid.index_of(t)
            nodes = fnodes[k0:]
            h = cfg.fd_step if cfg.fd_step is not None else default_fd_step(xk)
            idx = o * n + k
            inc = draw_increments(np.diff(nodes), d, seed, parallel.BRANCH_EXTRA, range(idx * n_inner, (idx + 1) * n_inner))
            Y[k], Z[k] = _inner_u(params, terminal, field_s, moll, nodes, xk, inc, h)
        wdot = interpolate_grid(field_s, M, grid.nodes, path)
        f = Y * wdot
        ds_int = float(np.sum(0.5 * np.diff(grid.nodes) * (f[:-1] + f[1:])))
        db_int = float(np.sum(Z[:-1] * np.diff(path, axis=0)))
        xi = terminal_eval(terminal, path[-1][None])[0][0]
        res[o] = Y[0] - xi - ds_int + db_int
    ms = MCEstimate.from_samples(res * res, seed)
    rms = float(np.sqrt(ms.mean))
    se = ms.std_error / (2.0 * rms) if rms > 0.0 else 0.0
    return ResidualReport(MCEstimate(rms, se, ms.n, int(seed)), res, len(grid) - 1)


def bsde_residual_refinement(params, terminal, field_s, moll, cfg: SolverConfig, seed: int,
                             step_counts=(8, 16, 32), **kw) -> List[ResidualReport]:
    """bsde_residual on successively halved uniform outer grids."""
    T = field_s.time_grid.end
    t0 = field_s.time_grid.start
    out = []
    for m in step_counts:
        sub = SolverConfig(cfg.n_paths, TimeGrid.uniform(t0, T, m), cfg.z_mode, cfg.fd_step,
                           cfg.antithetic, cfg.threads, cfg.shard_size)
        out.append(bsde_residual(params, terminal, field_s, moll, sub, seed, **kw))
    return out


# ---------------------------------------------------------------- isometry

@dataclass(frozen=True)
class Integrand:
    """Deterministic integrand: zero, one, or the indicator of [a, b]."""

    kind: str = "one"
    a: float = 0.0
    b: Optional[float] = None

    def interval(self, T: float):
        if self.kind == "one":
            return 0.0, T
        if self.kind == "indicator":
            return self.a, (T if self.b is None else self.b)
        return None


@dataclass(frozen=True)
class IsometryReport:
    mc: MCEstimate
    analytic: MCEstimate
    allowance: float
    mollified: Optional[float] = None

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.mc.std_error, self.analytic.std_error))

    def gap(self) -> float:
        return abs(self.mc.mean - self.analytic.mean)

    def passes(self, k: float = 3.0) -> bool:
        return self.gap() <= k * self.combined_se + self.allowance


def sigma_block(params: ModelParams, nodes, vals: np.ndarray, i0: int, i1: int, j0: int, j1: int) -> np.ndarray:
    """sum over cells [i0, i1) x [j0, j1) of W q(m_j, m_k) for a batch of paths."""
    nodes = np.asarray(nodes)
    W = cell_weights(params.h0, nodes[i0:i1 + 1], nodes[j0:j1 + 1])
    m = midpoints(vals)
    return pair_sums(params, W, m[:, i0:i1], m[:, j0:j1]).sigma


def analytic_blocks(params: ModelParams, path: BrownianPath, cuts: Sequence[float]) -> np.ndarray:
    """Matrix of double integrals between the pieces of [t_0, T] split at `cuts`."""
    grid = path.grid
    idx = [0] + [grid.index_of(c) for c in cuts] + [len(grid) - 1]
    vals = path.points[None]
    k = len(idx) - 1
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            out[i, j] = sigma_block(params, grid.nodes, vals, idx[i], idx[i + 1], idx[j], idx[j + 1])[0]
    return out


def isometry_check(params: ModelParams, integrand: Integrand, cfg: SolverConfig, seed: int,
                   moll: MollifierParams = MollifierParams(0.05, 0.05), n_samples: int = 2000,
                   space_grid=None, x=None, n_bias_paths: int = 200) -> IsometryReport:
    """Second moment of int f(s) Wdot(s, B_s) ds against the quadrature prediction.

    mc:        mean of the squared mollified integral over n_samples independent
               (field, path) pairs on cfg.grid
    analytic:  mean over cfg.n_paths paths of the quadrature double integral
    allowance: mollification bias, |mean(exact discrete mollified variance -
               quadrature)| + 2 standard errors over n_bias_paths paths (d = 1)
    """
    params.check()
    d = params.d
    x0 = as_points(0.0 if x is None else x, d)
    grid = cfg.grid
    T = grid.end
    iv = integrand.interval(T)
    if iv is None:
        zero = MCEstimate(0.0, 0.0, max(2, n_samples), int(seed))
        return IsometryReport(zero, MCEstimate(0.0, 0.0, cfg.n_paths, int(seed)), 0.0, 0.0)
    ia, ib = grid.index_of(iv[0]), grid.index_of(iv[1])
    if space_grid is None:
        space_grid = uniform_space_grid(d, float(np.max(np.abs(x0))) + 7.0, 281)

    def analytic_shard(a, b):
        vals = simulate_batch(grid, d, x0, seed, range(a, b))
        return sigma_block(params, grid.nodes, vals, ia, ib, ia, ib)

    ana = MCEstimate.from_samples(parallel.map_shards(analytic_shard, cfg.n_paths, cfg.threads, 256), seed)

    mseed = derived_seed(seed, 1)
    nodes = grid.nodes[ia:ib + 1]

    def mc_shard(a, b):
        fields = sample_field(params, grid, space_grid, b - a, mseed, first_index=a)
        vals = simulate_batch(grid, d, x0, mseed, range(a, b))
        out = np.empty(b - a)
        for r, fs in enumerate(fields):
            out[r] = v_mollified_batch(fs, moll, nodes, vals[r:r + 1, ia:ib + 1])[0] ** 2
        return out

    mc = MCEstimate.from_samples(parallel.map_shards(mc_shard, n_samples, cfg.threads, 64), mseed)

    allowance, moll_mean = 0.0, None
    if d == 1 and n_bias_paths > 0:
        ref = sample_field(params, grid, space_grid, 1, mseed)[0].zeros_like()
        vals = simulate_batch(grid, d, x0, derived_seed(seed, 2), range(n_bias_paths))
        diffs = np.empty(n_bias_paths)
        for k in range(n_bias_paths):
            sub = BrownianPath.from_points(TimeGrid(nodes), vals[k, ia:ib + 1])
            exact = mollified_variance(params, ref, moll, sub, nodes[0])
            diffs[k] = exact - sigma_block(params, grid.nodes, vals[k:k + 1], ia, ib, ia, ib)[0]
        bias = MCEstimate.from_samples(diffs, seed)
        allowance = abs(bias.mean) + 2.0 * bias.std_error
        moll_mean = ana.mean + bias.mean
    return IsometryReport(mc, ana, allowance, moll_mean)


# ---------------------------------------------------------------- exponential identity

def alpha_identity_check(params: ModelParams, field_s: FieldSample, moll: MollifierParams, path: BrownianPath,
                         partition_sizes: Sequence[int], t: Optional[float] = None, s: Optional[float] = None) -> List[float]:
    """Relative error of exp(K_t) = exp(K_s) + sum_i exp(K_{r_i}) (K_{r_{i+1}} - K_{r_i}).

    K_r = int_{t_0}^r Wdot(u, B_u) du is the trapezoid integral along the path;
    the partition of [s, t] is uniform and K between path nodes is linear.
    """
    nodes = path.grid.nodes
    s = nodes[0] if s is None else s
    t = nodes[-1] if t is None else t
    if t < s:
        raise DomainError("need s <= t")
    wd = mollified_noise_along(field_s, moll, path)
    K = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(nodes) * (wd[:-1] + wd[1:]))])
    lhs = np.exp(np.interp(t, nodes, K))
    out = []
    for m in partition_sizes:
        r = np.linspace(s, t, int(m) + 1)
        Kr = np.interp(r, nodes, K)
        rhs = np.exp(Kr[0]) + np.sum(np.exp(Kr[:-1]) * np.diff(Kr))
        out.append(float(abs(lhs - rhs) / abs(lhs)))
    return out


def mollified_noise_along(field_s: FieldSample, moll: MollifierParams, path: BrownianPath) -> np.ndarray:
    return interpolate_grid(field_s, mollified_grid(field_s, moll), path.grid.nodes, path.points)


# ---------------------------------------------------------------- tail probes

LAMBDA_CAP = 4.0


def exp_tail_probe(params: ModelParams, lambdas: Sequence[float], t: float, cfg: SolverConfig, seed: int,
                   x=None) -> List[MCEstimate]:
    """E exp(lambda V_t) = E_B exp(lambda^2 Sigma / 2) for each lambda, on shared paths."""
    params.check()
    lam = np.asarray(lambdas, dtype=float)
    if np.any(np.abs(lam) > LAMBDA_CAP):
        raise DomainError(f"|lambda| is capped at {LAMBDA_CAP}")
    sub = cfg.grid.from_time(t)
    W = cell_weights(params.h0, sub.nodes, sub.nodes)
    x0 = as_points(0.0 if x is None else x, params.d)

    def shard(a, b):
        vals = simulate_batch(sub, params.d, x0, seed, range(a, b))
        m = midpoints(vals)
        sig = pair_sums(params, W, m, m).sigma
        return exp_moment(np.multiply.outer(sig, lam * lam))

    samples = parallel.map_shards(shard, cfg.n_paths, cfg.threads, cfg.shard_size)
    return [MCEstimate.from_samples(samples[:, j], seed) for j in range(lam.size)]


@dataclass(frozen=True)
class TailStability:
    lam: float
    first: MCEstimate
    second: MCEstimate

    def z_score(self) -> float:
        se = np.hypot(self.first.std_error, self.second.std_error)
        return float(abs(self.first.mean - self.second.mean) / se) if se > 0 else 0.0


def exp_tail_stability(params, lambdas, t, cfg: SolverConfig, seed: int, x=None) -> List[TailStability]:
    """Independent estimates with N and 2N paths for each lambda."""
    first = exp_tail_probe(params, lambdas, t, cfg, derived_seed(seed, 0), x)
    cfg2 = SolverConfig(2 * cfg.n_paths, cfg.grid, threads=cfg.threads, shard_size=cfg.shard_size)
    second = exp_tail_probe(params, lambdas, t, cfg2, derived_seed(seed, 1), x)
    return [TailStability(float(l), a, b) for l, a, b in zip(lambdas, first, second)]
