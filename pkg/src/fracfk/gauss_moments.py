"""Exponential moments of jointly Gaussian, mean-zero variables.

For (X1, X2, Y) centered and jointly Gaussian:

    E e^Y          = exp(Var Y / 2)
    E[X e^Y]       = Cov(X, Y) exp(Var Y / 2)
    E[X1 X2 e^Y]   = (Cov(X1, X2) + Cov(X1, Y) Cov(X2, Y)) exp(Var Y / 2)

The last one follows from differentiating E exp(s X1 + t X2 + Y) twice at
s = t = 0. All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class MomentInputs:
    var_y: float
    cov_x1_y: float
    cov_x2_y: float
    cov_x1_x2: float


def _check_var(var_y):
    v = np.asarray(var_y, dtype=float)
    if np.any(v < 0.0) or np.any(np.isnan(v)):
        raise DomainError("variance of Y must be >= 0")
    return v


def _out(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def exp_moment(var_y):
    return _out(np.exp(0.5 * _check_var(var_y)))


def linear_exp_moment(cov_x_y, var_y):
    v = _check_var(var_y)
    return _out(np.asarray(cov_x_y, dtype=float) * np.exp(0.5 * v))


def bilinear_exp_moment(inputs: MomentInputs):
    v = _check_var(inputs.var_y)
    c = np.asarray(inputs.cov_x1_x2, dtype=float) + np.asarray(inputs.cov_x1_y) * np.asarray(inputs.cov_x2_y)
    return _out(c * np.exp(0.5 * v))
