import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracfk.analysis import (Integrand, StructureSeries, alpha_identity_check, bsde_residual,
                             bsde_residual_refinement, derived_seed, exp_tail_probe, exp_tail_stability,
                             holder_fit, isometry_check, lag_grid, structure_series)
from fracfk.errors import DegenerateSeries, DomainError, GridMismatch
from fracfk.field_sim import MollifierParams, sample_field, uniform_space_grid
from fracfk.fk_solver import MCEstimate, SolverConfig
from fracfk.paths import TerminalSpec, TimeGrid, simulate_paths


def simulate_path(grid, d, start, seed):
    return simulate_paths(grid, d, start, 1, seed)[0]

LAGS = [2.0 ** -k for k in (6, 5, 4, 3)]


def _series(moments, ses=None):
    ses = np.zeros(len(moments)) if ses is None else ses
    return StructureSeries(LAGS, [MCEstimate(float(m), float(s), 100, 0) for m, s in zip(moments, ses)])


# ---------------------------------------------------------------- Hölder fit

def test_exact_power_law():
    f = holder_fit(_series(3.0 * np.array(LAGS) ** 1.25))
    assert abs(f.exponent - 1.25) < 1e-10
    assert f.std_error == 0.0


def test_noisy_power_law_hit_rate():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(100):
        m = 2.0 * np.array(LAGS) ** 1.25 * (1 + 0.05 * rng.standard_normal(4))
        hits += abs(holder_fit(_series(m)).exponent - 1.25) <= 0.1
    assert hits >= 95


@given(st.floats(1e-6, 1e6), st.lists(st.floats(0.1, 10.0), min_size=4, max_size=4))
def test_fit_scale_invariant(c, m):
    a = holder_fit(_series(m)).exponent
    b = holder_fit(_series(np.array(m) * c)).exponent
    assert abs(a - b) < 1e-12


def test_fit_ci_from_standard_errors():
    m = np.array(LAGS) ** 1.0
    f = holder_fit(_series(m, 0.1 * m))
    lx = np.log(LAGS)
    c = (lx - lx.mean()) / np.sum((lx - lx.mean()) ** 2)
    assert f.std_error == pytest.approx(0.1 * np.sqrt(np.sum(c * c)))
    assert f.ci[0] < 1.0 < f.ci[1]


def test_degenerate_series():
    with pytest.raises(DegenerateSeries):
        holder_fit(_series([1.0, 0.0, 1.0, 2.0]))
    with pytest.raises(DegenerateSeries):
        holder_fit(StructureSeries(LAGS[:3], [MCEstimate(1.0, 0.0, 2, 0)] * 3))
    with pytest.raises(ValueError):
        StructureSeries([0.1, 0.05], [MCEstimate(1.0, 0.0, 2, 0)] * 2)


def test_lag_grid_contains_lag_and_horizon():
    g = lag_grid(0.25, 2.0 ** -5, 1.0)
    assert g.has_node(0.25) and g.has_node(0.25 + 2.0 ** -5) and g.end == 1.0
    assert g.start == 0.25 and np.all(np.diff(g.steps) >= -1e-15)


def test_zero_noise_y_structure_slope(zero_noise):
    # E|Y_t - Y_s|^2 ~ |grad u|^2 lag for a smooth heat flow started off the bump's crest
    ser = structure_series(zero_noise, TerminalSpec.gaussian_bump([0.0], 1.0), "y", LAGS,
                           SolverConfig(4000, TimeGrid.uniform(0.0, 1.0, 8)), seed=3, x=1.0)
    assert 0.9 <= holder_fit(ser).exponent <= 1.1


def test_derived_seeds_distinct():
    s = {derived_seed(7, k) for k in range(100)}
    assert len(s) == 100 and all(0 <= v < 2 ** 64 for v in s)


# ---------------------------------------------------------------- BSDE residual

def _field(params, n_time=16, count=1, seed=5):
    return sample_field(params, TimeGrid.uniform(0.0, 1.0, n_time), uniform_space_grid(1, 7.0, 141), count, seed)


def test_residual_constant_terminal_zero_noise(zero_noise):
    fs = _field(zero_noise)[0].zeros_like()
    rep = bsde_residual(zero_noise, TerminalSpec.constant(2.0), fs, MollifierParams(0.1, 0.1),
                        SolverConfig(5, TimeGrid.uniform(0.0, 1.0, 4)), seed=1, n_inner=20)
    assert rep.rms.mean == 0.0
    assert np.all(rep.residuals == 0.0)


def test_residual_linear_terminal_zero_noise(zero_noise):
    # antithetic inner paths reproduce Y = B exactly and Z = 1, so only roundoff remains
    fs = _field(zero_noise)[0].zeros_like()
    rep = bsde_residual(zero_noise, TerminalSpec.linear([1.0]), fs, MollifierParams(0.1, 0.1),
                        SolverConfig(5, TimeGrid.uniform(0.0, 1.0, 8)), seed=1, n_inner=20)
    assert rep.rms.mean < 1e-10


def test_residual_requires_field_nodes(base_params):
    fs = _field(base_params, n_time=4)[0]
    with pytest.raises(GridMismatch):
        bsde_residual(base_params, TerminalSpec.constant(1.0), fs, MollifierParams(0.1, 0.1),
                      SolverConfig(2, TimeGrid.uniform(0.0, 1.0, 8)), seed=1)


def test_residual_refines_with_mollified_noise(base_params):
    fs = _field(base_params, n_time=32, seed=6)[0]
    reps = bsde_residual_refinement(base_params, TerminalSpec.gaussian_bump([0.0], 1.0), fs,
                                    MollifierParams(0.1, 0.1), SolverConfig(20, TimeGrid.uniform(0.0, 1.0, 8)),
                                    seed=2, step_counts=(4, 8, 16), n_inner=200)
    rms = [r.rms.mean for r in reps]
    assert rms[0] > rms[1] > rms[2]


# ---------------------------------------------------------------- isometry

def test_isometry_zero_integrand(base_params):
    rep = isometry_check(base_params, Integrand("zero"), SolverConfig(10, TimeGrid.uniform(0.0, 1.0, 8)), seed=1)
    assert rep.mc.mean == 0.0 and rep.analytic.mean == 0.0 and rep.passes()


def test_isometry_analytic_linear_in_scale(base_params):
    cfg = SolverConfig(50, TimeGrid.uniform(0.0, 1.0, 8))
    a = isometry_check(base_params, Integrand("one"), cfg, seed=1, n_samples=2, n_bias_paths=0)
    b = isometry_check(base_params.with_scale(3.0), Integrand("one"), cfg, seed=1, n_samples=2, n_bias_paths=0)
    assert b.analytic.mean == pytest.approx(9.0 * a.analytic.mean, rel=1e-12)


def test_isometry_indicator_additivity(base_params):
    cfg = SolverConfig(200, TimeGrid.uniform(0.0, 1.0, 16))
    kw = dict(seed=4, n_samples=2, n_bias_paths=0)
    full = isometry_check(base_params, Integrand("one"), cfg, **kw).analytic.mean
    left = isometry_check(base_params, Integrand("indicator", 0.0, 0.5), cfg, **kw).analytic.mean
    right = isometry_check(base_params, Integrand("indicator", 0.5, 1.0), cfg, **kw).analytic.mean
    # full = left + right + 2 cross, and the cross term is positive for H0 > 1/2
    cross = 0.5 * (full - left - right)
    assert cross > 0.0
    assert left < full and right < full


def test_isometry_one_small(base_params):
    rep = isometry_check(base_params, Integrand("one"), SolverConfig(200, TimeGrid.uniform(0.0, 1.0, 16)),
                         seed=8, moll=MollifierParams(0.1, 0.1), n_samples=300, n_bias_paths=50)
    assert rep.passes()


# ---------------------------------------------------------------- exponential identity

def test_alpha_identity_zero_field(base_params):
    fs = _field(base_params)[0].zeros_like()
    path = simulate_path(TimeGrid.uniform(0.0, 1.0, 16), 1, 0.0, seed=1)
    assert alpha_identity_check(base_params, fs, MollifierParams(0.1, 0.1), path, [4, 8]) == [0.0, 0.0]


def test_alpha_identity_equal_times(base_params):
    fs = _field(base_params)[0]
    path = simulate_path(TimeGrid.uniform(0.0, 1.0, 16), 1, 0.0, seed=1)
    errs = alpha_identity_check(base_params, fs, MollifierParams(0.1, 0.1), path, [1, 8], t=0.5, s=0.5)
    assert max(errs) < 1e-15


@pytest.mark.parametrize("seed", [1, 2])
def test_alpha_identity_refines(base_params, seed):
    fs = _field(base_params, n_time=64, seed=seed)[0]
    path = simulate_path(TimeGrid.uniform(0.0, 1.0, 64), 1, 0.0, seed=seed)
    errs = alpha_identity_check(base_params, fs, MollifierParams(0.1, 0.1), path, [8, 16, 32, 64])
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_alpha_identity_order(base_params):
    fs = _field(base_params)[0]
    path = simulate_path(TimeGrid.uniform(0.0, 1.0, 16), 1, 0.0, seed=1)
    with pytest.raises(DomainError):
        alpha_identity_check(base_params, fs, MollifierParams(0.1, 0.1), path, [4], t=0.2, s=0.5)


# ---------------------------------------------------------------- tail probes

def test_tail_probe_lambda_zero_and_symmetry(base_params):
    cfg = SolverConfig(300, TimeGrid.uniform(0.0, 1.0, 8))
    out = exp_tail_probe(base_params, [0.0, 1.5, -1.5], 0.0, cfg, seed=1)
    assert out[0].mean == 1.0 and out[0].std_error == 0.0
    assert out[1].mean == out[2].mean
    assert out[1].mean > 1.0


def test_tail_probe_cap(base_params):
    with pytest.raises(DomainError):
        exp_tail_probe(base_params, [4.5], 0.0, SolverConfig(10, TimeGrid.uniform(0.0, 1.0, 4)), seed=1)


def test_tail_probe_later_start_smaller(base_params):
    cfg = SolverConfig(500, TimeGrid.uniform(0.0, 1.0, 8))
    early = exp_tail_probe(base_params, [1.0], 0.0, cfg, seed=1)[0]
    late = exp_tail_probe(base_params, [1.0], 0.5, cfg, seed=1)[0]
    assert late.mean < early.mean


def test_tail_stability(base_params):
    rep = exp_tail_stability(base_params, [2.0], 0.0, SolverConfig(2000, TimeGrid.uniform(0.0, 1.0, 16)), seed=3)
    assert rep[0].z_score() <= 3.0
