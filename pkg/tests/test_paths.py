import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.polynomial.hermite_e import hermegauss

from fracfk.errors import GridMismatch
from fracfk.paths import (BrownianPath, TerminalSpec, TimeGrid, branch_paths, heat_value, simulate_batch,
                          simulate_paths, terminal_eval, write_paths_csv)


# ---------------------------------------------------------------- grids

def test_uniform_grid_and_lookup():
    g = TimeGrid.uniform(0.0, 1.0, 4)
    assert len(g) == 5 and g.start == 0.0 and g.end == 1.0
    assert g.index_of(0.75) == 3
    assert g.from_time(0.5).nodes.tolist() == [0.5, 0.75, 1.0]
    with pytest.raises(GridMismatch):
        g.index_of(0.3)


def test_grid_rejects_bad_nodes():
    with pytest.raises(ValueError):
        TimeGrid([0.0, 0.5, 0.5])
    with pytest.raises(ValueError):
        TimeGrid([-0.1, 1.0])


@given(st.floats(0.0, 0.5), st.floats(1e-3, 0.25), st.integers(2, 16), st.floats(1.0, 1.5))
def test_graded_grid_structure(t0, lag, div, ratio):
    T = 1.0
    g = TimeGrid.graded(t0, T, lag / div, t0 + 2 * lag, ratio)
    assert g.start == t0 and g.end == T
    if t0 + 2 * lag <= T:
        assert g.has_node(t0 + lag)
    steps = g.steps
    assert np.all(steps > 0)
    k = min(2 * div, steps.size)
    assert np.allclose(steps[:k - 1], lag / div, rtol=1e-9)


# ---------------------------------------------------------------- paths

def test_first_value_is_start():
    g = TimeGrid.uniform(0.0, 1.0, 10)
    paths = simulate_paths(g, 2, [0.5, -1.0], 20, seed=1)
    for p in paths:
        assert np.array_equal(p.points[0], [0.5, -1.0])


def test_terminal_variance():
    n = 100_000
    g = TimeGrid.uniform(0.0, 1.0, 4)
    vals = simulate_batch(g, 1, [0.0], seed=7, indices=range(n))
    var = np.var(vals[:, -1, 0] - vals[:, 0, 0], ddof=1)
    assert abs(var - 1.0) < 5 * np.sqrt(2.0) / np.sqrt(n)


def test_same_seed_bit_identical():
    g = TimeGrid.uniform(0.0, 1.0, 16)
    a = simulate_batch(g, 1, [0.0], seed=3, indices=range(50))
    b = simulate_batch(g, 1, [0.0], seed=3, indices=range(50))
    assert np.array_equal(a, b)
    # a path depends on its index only, not on how the batch is cut
    c = np.concatenate([simulate_batch(g, 1, [0.0], 3, range(0, 17)), simulate_batch(g, 1, [0.0], 3, range(17, 50))])
    assert np.array_equal(a, c)


def test_disjoint_increments_uncorrelated():
    n = 20_000
    g = TimeGrid.uniform(0.0, 1.0, 2)
    vals = simulate_batch(g, 1, [0.0], seed=11, indices=range(n))
    inc = np.diff(vals[:, :, 0], axis=1)
    r = np.corrcoef(inc[:, 0], inc[:, 1])[0, 1]
    assert abs(r) < 5 / np.sqrt(n)


def test_branch_at_end_copies_common():
    g = TimeGrid.uniform(0.0, 1.0, 8)
    common = simulate_paths(g, 1, [0.0], 1, seed=2)[0]
    for a, b in branch_paths(common, 1.0, 3, seed=5):
        assert np.array_equal(a.values, common.values) and np.array_equal(b.values, common.values)


def test_branch_prefix_identical():
    g = TimeGrid.uniform(0.0, 1.0, 8)
    common = simulate_paths(g, 1, [0.0], 1, seed=2)[0]
    for a, b in branch_paths(common, 0.5, 4, seed=5):
        assert np.array_equal(a.values[:, :5], common.values[:, :5])
        assert np.array_equal(b.values[:, :5], common.values[:, :5])
        assert not np.array_equal(a.values[:, 5:], b.values[:, 5:])


def test_branch_at_start_independent():
    g = TimeGrid.uniform(0.0, 1.0, 2)
    common = BrownianPath.frozen(g, [0.0])
    pairs = branch_paths(common, 0.0, 10_000, seed=9)
    ends = np.array([[a.values[0, -1], b.values[0, -1]] for a, b in pairs])
    assert abs(np.corrcoef(ends.T)[0, 1]) < 0.05


def test_branch_covariance_equals_branch_time():
    n = 20_000
    g = TimeGrid.uniform(0.0, 1.0, 4)
    bt = 0.5
    common = simulate_batch(g, 1, [0.0], seed=4, indices=range(n))
    a_end, b_end = np.empty(n), np.empty(n)
    for k in range(n):
        pa, pb = branch_paths(BrownianPath(g, common[k].T), bt, 1, seed=100 + k)[0]
        a_end[k], b_end[k] = pa.values[0, -1], pb.values[0, -1]
    cov = np.cov(a_end, b_end)[0, 1]
    # Var of the sample covariance of two N(0,1) with cov 0.5 is (1 + 0.25) / n
    assert abs(cov - bt) < 5 * np.sqrt(1.25 / n)


def test_paths_csv_long_format():
    g = TimeGrid.uniform(0.0, 1.0, 2)
    paths = simulate_paths(g, 2, [0.0, 0.0], 2, seed=1)
    buf = io.StringIO()
    write_paths_csv(paths, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "path_id,time,b1,b2"
    assert len(lines) == 1 + 2 * 3
    row = lines[2].split(",")
    assert float(row[2]) == paths[0].points[1, 0]


# ---------------------------------------------------------------- terminal data

def test_linear_and_constant_terminals():
    x = np.array([[1.0, 2.0], [-1.0, 0.5]])
    v, g = terminal_eval(TerminalSpec.linear([2.0, -1.0], 0.5), x)
    assert np.allclose(v, [0.5, -2.0]) and np.allclose(g, [[2.0, -1.0]] * 2)
    v, g = terminal_eval(TerminalSpec.constant(3.0), x)
    assert np.all(v == 3.0) and np.all(g == 0.0)


@pytest.mark.parametrize("spec", [TerminalSpec.gaussian_bump([0.3, -0.2], 0.8, 1.5), TerminalSpec.cosine([1.0, 2.0])])
def test_smooth_terminal_gradient(spec):
    x = np.array([0.4, 0.9])
    g = terminal_eval(spec, x)[1]
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (terminal_eval(spec, x + e)[0] - terminal_eval(spec, x - e)[0]) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("spec", [TerminalSpec.gaussian_bump([0.5], 0.7), TerminalSpec.cosine([1.7], 0.6),
                                  TerminalSpec.linear([2.0], 1.0)])
def test_heat_value_against_gauss_hermite(spec):
    z, w = hermegauss(60)
    w = w / w.sum()
    x, tau = 0.3, 0.8
    ref = np.sum(w * terminal_eval(spec, (x + np.sqrt(tau) * z)[:, None])[0])
    assert heat_value(spec, np.array([x]), tau) == pytest.approx(ref, rel=1e-12)


def test_terminal_dict_roundtrip():
    for spec in [TerminalSpec.gaussian_bump([0.5], 0.7), TerminalSpec.cosine([1.7], 0.6), TerminalSpec.linear([2.0], 1.0),
                 TerminalSpec.constant(2.0)]:
        assert TerminalSpec.from_dict(spec.to_dict(), 1) == spec
    assert TerminalSpec.constant(1.0).holder_kappa == np.inf
