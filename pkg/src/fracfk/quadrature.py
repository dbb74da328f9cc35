"""
Product-integration quadrature for noise functionals along Brownian paths.

For a path B on a grid t = t_0 < ... < t_n = T the conditional variance

    Sigma = int_t^T int_t^T alpha |u - v|^{2H0 - 2} q(B_u, B_v) du dv

is approximated by sum_jk W_jk q(m_j, m_k), where W_jk integrates the singular
time kernel exactly over the cell pair and m_j is the path value at the
midpoint of cell j (mean of the two endpoint values). Cross terms between two
paths and the first and mixed spatial derivatives of q use the same scheme.

The batched helpers take midpoint arrays of shape (P, n_cells, d) and return
one value per path, so Monte Carlo estimators can evaluate many paths at once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import GridMismatch, SingularPoint
from .model import ModelParams, alpha_const, q_family, time_cell_weight, time_line_weight
from .paths import BrownianPath

# elements per q-evaluation block; bounds the temporaries of q_family
_BLOCK = 1 << 19


@dataclass(frozen=True)
class SigmaResult:
    value: float
    gradient: Optional[np.ndarray] = None
    cells_used: int = 0


class ATerms(NamedTuple):
    a1: float
    a2: np.ndarray
    a3: np.ndarray
    a4: float

    def bilinear(self) -> float:
        """Covariance part of the two-gradient Gaussian moment: a1 + a2 . a3."""
        return float(self.a1 + np.dot(self.a2, self.a3))


# ---------------------------------------------------------------- weights

def cell_weights(h0: float, nodes1, nodes2) -> np.ndarray:
    """Exact kernel mass of every cell pair: shape (n1 - 1, n2 - 1)."""
    n1 = np.asarray(nodes1, dtype=float)
    n2 = np.asarray(nodes2, dtype=float)
    return time_cell_weight(h0, n1[:-1, None], n1[1:, None], n2[None, :-1], n2[None, 1:])


def line_weights(h0: float, s: float, nodes) -> np.ndarray:
    """Exact mass of alpha |s - u|^{2H0 - 2} over each cell of `nodes`."""
    n = np.asarray(nodes, dtype=float)
    return time_line_weight(h0, s, n[:-1], n[1:])


def bridge_variance(nodes1, nodes2) -> np.ndarray:
    """Variance of the difference between independent Brownian bridges at the
    midpoints of cells j (of nodes1) and k (of nodes2): (dt_j + dt_k) / 4."""
    return 0.25 * (np.diff(np.asarray(nodes1, float))[:, None] + np.diff(np.asarray(nodes2, float))[None, :])


def midpoints(values: np.ndarray) -> np.ndarray:
    """Cell-midpoint path values from node values along axis -2."""
    return 0.5 * (values[..., :-1, :] + values[..., 1:, :])


# ---------------------------------------------------------------- batched sums

class PairSums(NamedTuple):
    sigma: np.ndarray
    grad_x: Optional[np.ndarray]
    grad_y: Optional[np.ndarray]
    mixed: Optional[np.ndarray]


def pair_sums(params: ModelParams, W: np.ndarray, m1: np.ndarray, m2: np.ndarray,
              grad: bool = False, mixed: bool = False, mixed_var=None) -> PairSums:
    """sum_jk W_jk F(m1[p, j], m2[p, k]) for every path p.

    F is q, its x- and y-gradients (when grad) and the trace of the mixed
    derivatives sum_i d^2 q / dx_i dy_i (when mixed). mixed_var (n1, n2), if
    given, is the variance the singular factor of the mixed derivative is
    averaged over (see q_family).
    """
    P, n1, d = m1.shape
    n2 = m2.shape[1]
    sigma = np.empty(P)
    gx = np.empty((P, d)) if grad else None
    gy = np.empty((P, d)) if grad else None
    mx = np.empty(P) if mixed else None
    per = max(1, _BLOCK // max(1, n1 * n2 * d))
    for a in range(0, P, per):
        b = min(P, a + per)
        fam = q_family(params, m1[a:b, :, None, :], m2[a:b, None, :, :], grad=grad, mixed=mixed,
                       mixed_var=None if mixed_var is None else mixed_var[None])
        sigma[a:b] = np.einsum("pjk,jk->p", fam.value, W)
        if grad:
            gx[a:b] = np.einsum("pjki,jk->pi", fam.grad_x, W)
            gy[a:b] = np.einsum("pjki,jk->pi", fam.grad_y, W)
        if mixed:
            mx[a:b] = np.einsum("pjk,jk->p", fam.mixed.sum(axis=-1), W)
    return PairSums(sigma, gx, gy, mx)


def self_sums(params: ModelParams, W: np.ndarray, m: np.ndarray, grad: bool = False):
    """Sigma and the one-sided gradient sum W dq/dx for each path.

    The full start-point gradient of Sigma is twice the one-sided sum because
    W and q are symmetric.
    """
    s = pair_sums(params, W, m, m, grad=grad)
    return s.sigma, s.grad_x


# ---------------------------------------------------------------- single-path API

def _start_index(path: BrownianPath, t: float) -> int:
    k = path.grid.index_of(t)
    if k >= len(path.grid) - 1:
        raise GridMismatch(f"t = {t!r} must lie strictly before the end of the grid")
    return k


def sigma_self(params: ModelParams, path: BrownianPath, t: float, dump=None) -> SigmaResult:
    """Conditional variance of the noise functional over [t, T] along `path`.

    dump: optional file path or handle receiving per-cell contributions as CSV.
    """
    k = _start_index(path, t)
    nodes = path.grid.nodes[k:]
    W = cell_weights(params.h0, nodes, nodes)
    m = midpoints(path.points[k:])[None]
    value = float(pair_sums(params, W, m, m).sigma[0])
    if dump is not None:
        _dump_cells(params, W, nodes, m[0], nodes, m[0], dump)
    return SigmaResult(value, None, W.size)


def sigma_cross(params: ModelParams, path1: BrownianPath, path2: BrownianPath,
                interval1, interval2) -> SigmaResult:
    """Cross double integral between path1 on interval1 and path2 on interval2."""
    t1, e1 = interval1
    t2, e2 = interval2
    for path, (t, e) in ((path1, interval1), (path2, interval2)):
        if not (path.grid.has_node(t) and path.grid.has_node(e)):
            raise GridMismatch("interval endpoints must be nodes of the path grid")
    i1, j1 = path1.grid.index_of(t1), path1.grid.index_of(e1)
    i2, j2 = path2.grid.index_of(t2), path2.grid.index_of(e2)
    if j1 <= i1 or j2 <= i2:
        return SigmaResult(0.0, None, 0)
    n1 = path1.grid.nodes[i1:j1 + 1]
    n2 = path2.grid.nodes[i2:j2 + 1]
    W = cell_weights(params.h0, n1, n2)
    m1 = midpoints(path1.points[i1:j1 + 1])[None]
    m2 = midpoints(path2.points[i2:j2 + 1])[None]
    return SigmaResult(float(pair_sums(params, W, m1, m2).sigma[0]), None, W.size)


def grad_sigma_x(params: ModelParams, path: BrownianPath, t: float) -> SigmaResult:
    """Sigma over [t, T] and its gradient with respect to a shift of the whole path."""
    k = _start_index(path, t)
    nodes = path.grid.nodes[k:]
    W = cell_weights(params.h0, nodes, nodes)
    m = midpoints(path.points[k:])[None]
    s = pair_sums(params, W, m, m, grad=True)
    return SigmaResult(float(s.sigma[0]), s.grad_x[0] + s.grad_y[0], W.size)


def a_terms(params: ModelParams, path1: BrownianPath, path2: BrownianPath,
            s1: float, s2: float, t: float) -> ATerms:
    """Covariances entering the second moment of the gradient representation.

    With X^c_i = d_i Wdot(s_c, B^c_{s_c}) and Y = V^1_t + V^2_t:
      a1 = sum_i E[X^1_i X^2_i] = alpha |s2 - s1|^{2H0-2} sum_i d^2 q / dx_i dy_i (B^1_{s1}, B^2_{s2})
      a2 = E[X^1 Y] (vector over i), a3 = E[X^2 Y], a4 = Var Y.
    """
    if s1 == s2:
        raise SingularPoint("a_terms needs s1 != s2")
    if not path1.grid.same_as(path2.grid):
        raise GridMismatch("a_terms needs both paths on the same grid")
    grid = path1.grid
    k = _start_index(path1, t)
    k1, k2 = grid.index_of(s1), grid.index_of(s2)
    if not (k < k1 < len(grid) - 1 and k < k2 < len(grid) - 1):
        raise GridMismatch("s1 and s2 must be interior nodes of (t, T)")
    h0 = params.h0
    x1 = path1.points[k1]
    x2 = path2.points[k2]
    fam = q_family(params, x1, x2, mixed=True)
    a1 = alpha_const(h0) * abs(s2 - s1) ** (2.0 * h0 - 2.0) * float(fam.mixed.sum())

    nodes = grid.nodes[k:]
    m1 = midpoints(path1.points[k:])
    m2 = midpoints(path2.points[k:])

    def grad_cov(x, s):
        lw = line_weights(h0, s, nodes)
        g1 = q_family(params, x[None, :], m1, grad=True).grad_x
        g2 = q_family(params, x[None, :], m2, grad=True).grad_x
        return lw @ (g1 + g2)

    a2 = grad_cov(x1, s1)
    a3 = grad_cov(x2, s2)
    W = cell_weights(h0, nodes, nodes)
    v11 = pair_sums(params, W, m1[None], m1[None]).sigma[0]
    v22 = pair_sums(params, W, m2[None], m2[None]).sigma[0]
    v12 = pair_sums(params, W, m1[None], m2[None]).sigma[0]
    return ATerms(a1, a2, a3, float(v11 + 2.0 * v12 + v22))


def _dump_cells(params, W, nodes1, m1, nodes2, m2, target) -> None:
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", newline="") if own else target
    try:
        q = q_family(params, m1[:, None, :], m2[None, :, :]).value
        w = csv.writer(fh)
        w.writerow(["j", "k", "u_lo", "u_hi", "v_lo", "v_hi", "weight", "q", "contribution"])
        for j in range(W.shape[0]):
            for k in range(W.shape[1]):
                w.writerow([j, k] + [repr(float(v)) for v in (
                    nodes1[j], nodes1[j + 1], nodes2[k], nodes2[k + 1], W[j, k], q[j, k], W[j, k] * q[j, k])])
    finally:
        if own:
            fh.close()
