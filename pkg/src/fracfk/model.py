"""
Model parameters and the deterministic kernels of the weighted fractional field.

The noise W(t, x) is a centered Gaussian field with covariance

    E[W(s, x) W(t, y)] = R_{H0}(s, t) * q(x, y),
    q(x, y) = rho(x) rho(y) prod_i R_{H_i}(x_i, y_i),
    R_H(a, b) = (|a|^{2H} + |b|^{2H} - |a - b|^{2H}) / 2,

with the smooth power weight rho(x) = scale * prod_i (1 + x_i^2)^(-beta_i / 2).
Its formal time derivative has covariance alpha_{H0} |s - t|^{2H0 - 2} q(x, y)
with alpha_H = H(2H - 1).

All kernel functions accept numpy arrays and broadcast; points in space carry
the coordinate index on the last axis.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidParams, SingularPoint


@dataclass(frozen=True)
class HurstParams:
    """Temporal exponent h0 and spatial exponents h (one per axis)."""

    h0: float
    h: tuple

    def __post_init__(self):
        object.__setattr__(self, "h0", float(self.h0))
        object.__setattr__(self, "h", tuple(float(v) for v in np.atleast_1d(self.h)))

    def h_min(self) -> float:
        return min((self.h0,) + self.h)

    def h_max(self) -> float:
        return max((self.h0,) + self.h)


@dataclass(frozen=True)
class WeightParams:
    """Decay exponents of the smooth power weight and an overall amplitude.

    scale multiplies rho; scale = 0 switches the noise off entirely.
    """

    betas: tuple
    form: str = "smooth_power"
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(v) for v in np.atleast_1d(self.betas)))
        object.__setattr__(self, "scale", float(self.scale))


@dataclass(frozen=True)
class ModelParams:
    d: int
    hurst: HurstParams
    weight: WeightParams
    horizon_T: float = 1.0

    @classmethod
    def build(cls, d, h0, h, beta, T=1.0, scale=1.0) -> "ModelParams":
        return cls(int(d), HurstParams(h0, tuple(h)), WeightParams(tuple(beta), scale=scale), float(T))

    @classmethod
    def from_dict(cls, cfg: dict) -> "ModelParams":
        return cls.build(
            cfg["d"], cfg["h0"], cfg["h"], cfg["beta"],
            T=cfg.get("T", 1.0), scale=cfg.get("scale", 1.0),
        )

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "h0": self.hurst.h0,
            "h": list(self.hurst.h),
            "beta": list(self.weight.betas),
            "T": self.horizon_T,
            "scale": self.weight.scale,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def h0(self) -> float:
        return self.hurst.h0

    @property
    def T(self) -> float:
        return self.horizon_T

    def alpha(self) -> float:
        return float(sum(2.0 * h - b for h, b in zip(self.hurst.h, self.weight.betas)))

    def with_scale(self, scale: float) -> "ModelParams":
        return replace(self, weight=replace(self.weight, scale=float(scale)))

    def zero_noise(self) -> "ModelParams":
        return self.with_scale(0.0)

    def check(self) -> "ModelParams":
        report = validate_params(self)
        if not report.ok:
            raise InvalidParams(report.violations)
        return self


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple = field(default_factory=tuple)


def _in_open(v, lo, hi) -> bool:
    return math.isfinite(v) and lo < v < hi


def validate_params(params: ModelParams) -> ValidationReport:
    """Check every admissibility constraint; never raises."""
    bad = []
    d = params.d
    if not isinstance(d, (int, np.integer)) or d < 1:
        bad.append(f"d must be a positive integer, got {d!r}")
        d = None
    h0 = params.hurst.h0
    if not _in_open(h0, 0.5, 1.0):
        bad.append(f"h0 out of range (1/2, 1): {h0!r}")
    hs, bs = params.hurst.h, params.weight.betas
    if d is not None and len(hs) != d:
        bad.append(f"len(h) = {len(hs)} does not match d = {d}")
    if d is not None and len(bs) != d:
        bad.append(f"len(beta) = {len(bs)} does not match d = {d}")
    for i, h in enumerate(hs):
        if not _in_open(h, 0.5, 1.0):
            bad.append(f"h[{i}] out of range (1/2, 1): {h!r}")
    for i, b in enumerate(bs):
        if not _in_open(b, 0.0, 2.0):
            bad.append(f"beta[{i}] out of range (0, 2): {b!r}")
    for i, (h, b) in enumerate(zip(hs, bs)):
        if not 2.0 * h > b:
            bad.append(f"2*h[{i}] > beta[{i}] violated: 2*{h!r} <= {b!r}")
    a = params.alpha()
    if not (math.isfinite(a) and a < 2.0):
        bad.append(f"alpha = sum(2*h[i] - beta[i]) must be < 2, got {a:.6g}")
    if params.weight.form != "smooth_power":
        bad.append(f"unknown weight form {params.weight.form!r}")
    if not (math.isfinite(params.weight.scale) and params.weight.scale >= 0.0):
        bad.append(f"scale must be >= 0, got {params.weight.scale!r}")
    T = params.horizon_T
    if not (math.isfinite(T) and T > 0.0):
        bad.append(f"T must be > 0, got {T!r}")
    return ValidationReport(not bad, tuple(bad))


def _out(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


# ---------------------------------------------------------------- 1-d kernels

def r_h(h, x, y):
    """Fractional covariance R_H(x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = 2.0 * h
    return _out(0.5 * (np.abs(x) ** p + np.abs(y) ** p - np.abs(x - y) ** p))


def alpha_const(h) -> float:
    return float(h * (2.0 * h - 1.0))


def dr_h_dx(h, x, y):
    """Partial derivative of R_H in its first argument (sign(0) = 0)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = 2.0 * h - 1.0
    return _out(h * (np.sign(x) * np.abs(x) ** p - np.sign(x - y) * np.abs(x - y) ** p))


def d2r_h_dxdy(h, x, y):
    """Mixed derivative alpha_H |x - y|^{2H - 2}; singular on the diagonal."""
    diff = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    if np.any(diff == 0.0):
        raise SingularPoint("mixed derivative of R_H is singular at x = y")
    return _out(alpha_const(h) * diff ** (2.0 * h - 2.0))


def time_cell_weight(h0, a, b, c, e):
    """Exact integral of alpha_{h0} |u - v|^{2 h0 - 2} over [a, b] x [c, e]."""
    a, b, c, e = (np.asarray(v, dtype=float) for v in (a, b, c, e))
    p = 2.0 * h0
    w = 0.5 * (np.abs(a - e) ** p + np.abs(b - c) ** p - np.abs(b - e) ** p - np.abs(a - c) ** p)
    return _out(np.where((a == b) | (c == e), 0.0, w))


def time_line_weight(h0, s, a, b):
    """Exact integral of alpha_{h0} |s - u|^{2 h0 - 2} du over [a, b]."""
    s, a, b = (np.asarray(v, dtype=float) for v in (s, a, b))
    p = 2.0 * h0 - 1.0

    def g(u):
        return np.sign(u - s) * np.abs(u - s) ** p

    return _out(h0 * (g(b) - g(a)))


# ---------------------------------------------------------------- weight rho

def _rho_log_grad(weight: WeightParams, x):
    """rho(x) and the logarithmic gradient (d rho / dx_i) / rho."""
    x = np.asarray(x, dtype=float)
    betas = np.asarray(weight.betas)
    one_plus = 1.0 + x * x
    value = weight.scale * np.exp(np.sum(-0.5 * betas * np.log(one_plus), axis=-1))
    return value, -betas * x / one_plus


def rho_and_grad(weight: WeightParams, x):
    """Value and analytic gradient of the weight at x (last axis = coordinates)."""
    value, lg = _rho_log_grad(weight, x)
    return _out(value), np.asarray(value)[..., None] * lg


# ---------------------------------------------------------------- spatial q

_TABLE_Z = 60.0
_TABLE_N = 4001


@lru_cache(maxsize=16)
def _hyp_table(p: float):
    """1F1(-p/2; 1/2; -z) on a grid uniform in sqrt(z)."""
    from scipy.special import hyp1f1

    r = np.linspace(0.0, np.sqrt(_TABLE_Z), _TABLE_N)
    return r, hyp1f1(-0.5 * p, 0.5, -r * r)


def smoothed_abs_power(mu, var, p: float):
    """E|mu + sqrt(var) N|^p for standard normal N and p in (-1, 0).

    Equals var^{p/2} 2^{p/2} Gamma((1+p)/2) / sqrt(pi) * 1F1(-p/2; 1/2; -mu^2 / (2 var));
    the hypergeometric factor is tabulated and replaced by its asymptotic
    series when mu^2 / (2 var) is large. var = 0 gives |mu|^p.
    """
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    mu, var = np.broadcast_arrays(mu, var)
    out = np.empty(mu.shape)
    amu = np.abs(mu)
    pos = var > 0.0
    if np.any(~pos):
        if np.any(amu[~pos] == 0.0):
            raise SingularPoint("unsmoothed singular power at a coincidence")
        out[~pos] = amu[~pos] ** p
    if np.any(pos):
        m, v = amu[pos], var[pos]
        z = m * m / (2.0 * v)
        res = np.empty(m.shape)
        far = z > _TABLE_Z
        if np.any(far):
            # |mu|^p (1 + c1 s + c2 s^2), s = var / mu^2
            sv = v[far] / (m[far] ** 2)
            c1 = 0.5 * p * (p - 1.0)
            c2 = p * (p - 1.0) * (p - 2.0) * (p - 3.0) / 8.0
            res[far] = m[far] ** p * (1.0 + c1 * sv + c2 * sv * sv)
        near = ~far
        if np.any(near):
            r, f = _hyp_table(float(p))
            const = 2.0 ** (0.5 * p) * math.gamma(0.5 * (1.0 + p)) / math.sqrt(math.pi)
            res[near] = v[near] ** (0.5 * p) * const * np.interp(np.sqrt(z[near]), r, f)
        out[pos] = res
    return out


class QFamily(NamedTuple):
    value: np.ndarray
    grad_x: Optional[np.ndarray]
    grad_y: Optional[np.ndarray]
    mixed: Optional[np.ndarray]


def q_family(params: ModelParams, x, y, grad: bool = False, mixed: bool = False, mixed_var=None) -> QFamily:
    """q(x, y) and optionally its first derivatives and the mixed derivatives
    d^2 q / dx_i dy_i, all sharing intermediate powers.

    x and y broadcast against each other; the last axis holds the d coordinates.
    grad_x, grad_y and mixed carry the coordinate index i on the last axis.
    mixed_var, when given, replaces the singular factor |x_i - y_i|^{2h_i - 2}
    by its average E|x_i - y_i + sqrt(mixed_var) N|^{2h_i - 2}; it must
    broadcast against the point shape without the coordinate axis.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = params.d
    rx, lx = _rho_log_grad(params.weight, x)
    ry, ly = _rho_log_grad(params.weight, y)
    pref = rx * ry

    R, dRx, dRy, dRxy = [], [], [], []
    for i, h in enumerate(params.hurst.h):
        xi, yi = x[..., i], y[..., i]
        p = 2.0 * h - 1.0
        ax, ay = np.abs(xi), np.abs(yi)
        ax_p, ay_p = ax ** p, ay ** p
        diff = xi - yi
        ad = np.abs(diff)
        ad_p = ad ** p
        R.append(0.5 * (ax_p * ax + ay_p * ay - ad_p * ad))
        if grad or mixed:
            sd = np.sign(diff) * ad_p
            dRx.append(h * (np.sign(xi) * ax_p - sd))
            dRy.append(h * (np.sign(yi) * ay_p + sd))
        if mixed:
            if mixed_var is not None:
                dRxy.append(alpha_const(h) * smoothed_abs_power(diff, mixed_var, 2.0 * h - 2.0))
            else:
                if np.any(ad == 0.0):
                    raise SingularPoint(f"mixed derivative requested with x_{i} = y_{i}")
                dRxy.append(alpha_const(h) * ad_p / ad)

    def prod_except(skip):
        out = 1.0
        for j in range(d):
            if j != skip:
                out = out * R[j]
        return out

    prod_all = prod_except(-1)
    value = pref * prod_all
    gx = gy = mx = None
    if grad or mixed:
        others = [prod_except(i) for i in range(d)]
    if grad:
        gx = np.stack([pref * (lx[..., i] * prod_all + dRx[i] * others[i]) for i in range(d)], axis=-1)
        gy = np.stack([pref * (ly[..., i] * prod_all + dRy[i] * others[i]) for i in range(d)], axis=-1)
    if mixed:
        mx = np.stack(
            [
                pref * others[i] * (
                    lx[..., i] * ly[..., i] * R[i] + lx[..., i] * dRy[i] + ly[..., i] * dRx[i] + dRxy[i]
                )
                for i in range(d)
            ],
            axis=-1,
        )
    return QFamily(value, gx, gy, mx)


class QOrder(str, Enum):
    VALUE = "value"
    GRAD_X = "grad_x"
    MIXED = "mixed"


def q_and_derivatives(params: ModelParams, x, y, order=QOrder.VALUE, i: Optional[int] = None):
    """q(x, y), its x-gradient, or the mixed derivative in coordinate i."""
    order = QOrder(order)
    if order is QOrder.VALUE:
        return _out(q_family(params, x, y).value)
    if order is QOrder.GRAD_X:
        return q_family(params, x, y, grad=True).grad_x
    if i is None:
        raise ValueError("mixed derivative needs a coordinate index i")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x[..., i] == y[..., i]):
        raise SingularPoint(f"mixed derivative requested with x_{i} = y_{i}")
    # only coordinate i is singular; the others may coincide
    return _out(_mixed_single(params, x, y, i))


def _mixed_single(params, x, y, i):
    rx, lx = _rho_log_grad(params.weight, x)
    ry, ly = _rho_log_grad(params.weight, y)
    pref = rx * ry
    h = params.hurst.h[i]
    others = 1.0
    for j, hj in enumerate(params.hurst.h):
        if j != i:
            others = others * r_h(hj, x[..., j], y[..., j])
    xi, yi = x[..., i], y[..., i]
    Ri = r_h(h, xi, yi)
    dx = dr_h_dx(h, xi, yi)
    dy = dr_h_dx(h, yi, xi)
    dxy = d2r_h_dxdy(h, xi, yi)
    return pref * others * (lx[..., i] * ly[..., i] * Ri + lx[..., i] * dy + ly[..., i] * dx + dxy)


def q_growth_bound(params: ModelParams, x, y):
    """Envelope 2^d prod_i (1+|x_i|)^{2h_i - b_i} (1+|y_i|)^{2h_i - b_i}."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    expo = 2.0 * np.asarray(params.hurst.h) - np.asarray(params.weight.betas)
    env = np.prod((1.0 + np.abs(x)) ** expo * (1.0 + np.abs(y)) ** expo, axis=-1)
    return _out(params.weight.scale ** 2 * 2.0 ** params.d * env)


def as_points(x, d: int) -> np.ndarray:
    """Coerce a scalar or sequence to an array with trailing axis d."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape[-1] != d:
        raise ValueError(f"expected trailing dimension {d}, got shape {arr.shape}")
    return arr


__all__ = [
    "HurstParams", "WeightParams", "ModelParams", "ValidationReport", "validate_params",
    "r_h", "alpha_const", "dr_h_dx", "d2r_h_dxdy", "time_cell_weight", "time_line_weight",
    "rho_and_grad", "smoothed_abs_power", "q_family", "QFamily", "QOrder", "q_and_derivatives", "q_growth_bound", "as_points",
]
