import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracfk.errors import SingularPoint
from fracfk.model import ModelParams, q_family, time_cell_weight, time_line_weight
from fracfk.paths import BrownianPath, TimeGrid, simulate_paths
from fracfk.quadrature import (a_terms, bridge_variance, cell_weights, grad_sigma_x, sigma_cross, sigma_self)


def _grid(n=32, T=1.0):
    return TimeGrid.uniform(0.0, T, n)


def test_zero_path_gives_zero(base_params):
    assert sigma_self(base_params, BrownianPath.frozen(_grid(), [0.0]), 0.0).value == 0.0


def test_frozen_path_closed_form(base_params):
    # q(1, 1) (T - t)^{2 H0} = 0.5
    assert sigma_self(base_params, BrownianPath.frozen(_grid(), [1.0]), 0.0).value == pytest.approx(0.5, rel=1e-12)


@pytest.mark.parametrize("h1", [0.6, 0.75, 0.9])
def test_frozen_path_any_h1(h1):
    p = ModelParams.build(1, 0.75, [h1], [1.0])
    assert sigma_self(p, BrownianPath.frozen(_grid(8), [1.0]), 0.0).value == pytest.approx(0.5, rel=1e-12)


def test_frozen_path_scaling_in_horizon(base_params):
    lens = np.array([0.25, 0.5, 1.0])
    vals = [sigma_self(base_params, BrownianPath.frozen(TimeGrid.uniform(1.0 - L, 1.0, 16), [0.7]), 1.0 - L).value
            for L in lens]
    slope = np.polyfit(np.log(lens), np.log(vals), 1)[0]
    assert slope == pytest.approx(1.5, abs=1e-6)


def test_refinement_converges(base_params):
    # one random path is noisy level to level; the mean change over paths is not
    levels = (16, 32, 64, 128, 256)
    changes = []
    for seed in range(20):
        fine = simulate_paths(TimeGrid.uniform(0.0, 1.0, 256), 1, [0.3], 1, seed=seed)[0]
        vals = [sigma_self(base_params, BrownianPath.from_points(TimeGrid.uniform(0.0, 1.0, n), fine.points[:: 256 // n]),
                           0.0).value for n in levels]
        changes.append(np.abs(np.diff(vals)))
    mean_change = np.mean(changes, axis=0)
    assert np.all(mean_change[1:] < mean_change[:-1])


def test_weight_scaling_quadratic(base_params):
    path = simulate_paths(_grid(), 1, [0.2], 1, seed=3)[0]
    s1 = sigma_self(base_params, path, 0.0).value
    s3 = sigma_self(base_params.with_scale(3.0), path, 0.0).value
    assert s3 == pytest.approx(9.0 * s1, rel=1e-12)


# ---------------------------------------------------------------- cross terms

def test_cross_with_itself_is_self(base_params):
    path = simulate_paths(_grid(), 1, [0.2], 1, seed=5)[0]
    a = sigma_cross(base_params, path, path, (0.25, 1.0), (0.25, 1.0)).value
    assert a == pytest.approx(sigma_self(base_params, path, 0.25).value, rel=1e-12)


def test_cross_with_zero_path(base_params):
    path = simulate_paths(_grid(), 1, [0.2], 1, seed=5)[0]
    assert sigma_cross(base_params, path, BrownianPath.frozen(_grid(), [0.0]), (0, 1), (0, 1)).value == 0.0


def test_cross_frozen_pair(base_params):
    g = _grid(4)
    v = sigma_cross(base_params, BrownianPath.frozen(g, [1.0]), BrownianPath.frozen(g, [2.0]), (0, 1), (0, 1)).value
    assert v == pytest.approx(0.447214, abs=1e-6)


@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_pair_gram_psd(i, j):
    p = ModelParams.build(1, 0.75, [0.75], [1.0])
    g = _grid(16)
    a = simulate_paths(g, 1, [0.0], 1, seed=i)[0]
    b = simulate_paths(g, 1, [0.5], 1, seed=j + 20_000)[0]
    s11 = sigma_self(p, a, 0.0).value
    s22 = sigma_self(p, b, 0.0).value
    s12 = sigma_cross(p, a, b, (0, 1), (0, 1)).value
    assert s11 * s22 - s12 ** 2 >= -1e-8 * s11 * s22


def test_interval_additivity(base_params):
    path = simulate_paths(_grid(), 1, [0.1], 1, seed=8)[0]
    total = sigma_self(base_params, path, 0.0).value
    parts = [(0.0, 0.375), (0.375, 1.0)]
    blocks = sum(sigma_cross(base_params, path, path, a, b).value for a in parts for b in parts)
    assert blocks == pytest.approx(total, rel=1e-12)
    nodes = _grid().nodes
    assert cell_weights(0.75, nodes, nodes).sum() == pytest.approx(1.0, rel=1e-12)


# ---------------------------------------------------------------- gradient

def test_gradient_frozen_examples(base_params):
    g = _grid(8)
    assert np.allclose(grad_sigma_x(base_params, BrownianPath.frozen(g, [0.0]), 0.0).gradient, 0.0)
    # d/dc [(1 + c^2)^{-1} c^{1.5}] at c = 1
    assert grad_sigma_x(base_params, BrownianPath.frozen(g, [1.0]), 0.0).gradient[0] == pytest.approx(0.25, rel=1e-10)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_gradient_finite_difference(seed):
    p = ModelParams.build(2, 0.75, [0.75, 0.7], [1.0, 0.8])
    path = simulate_paths(_grid(24), 2, [0.4, -0.6], 1, seed=seed)[0]
    res = grad_sigma_x(p, path, 0.0)
    h = 1e-4
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (sigma_self(p, path.shifted(e), 0.0).value - sigma_self(p, path.shifted(-e), 0.0).value) / (2 * h)
        assert res.gradient[i] == pytest.approx(fd, rel=1e-3)


def test_dump_cells(base_params):
    buf = io.StringIO()
    path = BrownianPath.frozen(_grid(2), [1.0])
    sigma_self(base_params, path, 0.0, dump=buf)
    rows = buf.getvalue().strip().splitlines()
    assert rows[0].startswith("j,k,u_lo") and len(rows) == 5
    assert sum(float(r.split(",")[-1]) for r in rows[1:]) == pytest.approx(0.5, rel=1e-12)


# ---------------------------------------------------------------- a-terms

def test_a_terms_zero_paths(base_params):
    g = _grid(8)
    z = BrownianPath.frozen(g, [0.0])
    with pytest.raises(SingularPoint):
        a_terms(base_params, z, z, 0.25, 0.5, 0.0)
    # the other terms vanish at the origin: q and its first derivatives are 0 there
    assert sigma_self(base_params, z, 0.0).value == 0.0
    fam = q_family(base_params, np.zeros((1, 1)), np.zeros((1, 1)), grad=True)
    assert fam.grad_x[0, 0] == 0.0 and fam.grad_y[0, 0] == 0.0


def test_a4_doubles_copies(base_params):
    path = simulate_paths(_grid(16), 1, [0.3], 1, seed=4)[0]
    t = a_terms(base_params, path, path.shifted([0.5]), 0.25, 0.5, 0.0)
    same = a_terms(base_params, path, path, 0.25, 0.5, 0.0)
    assert same.a4 == pytest.approx(4 * sigma_self(base_params, path, 0.0).value, rel=1e-12)
    assert t.a4 > 0


def test_a1_against_finite_differences_of_cross_terms(base_params):
    s1, s2, dt = 0.25, 0.5, 1e-4
    x1, x2 = 0.7, -0.4
    g = TimeGrid([0.0, s1, s1 + dt, s2, s2 + dt, 1.0])
    h = 1e-4

    def cross(a, b):
        return sigma_cross(base_params, BrownianPath.frozen(g, [a]), BrownianPath.frozen(g, [b]),
                           (s1, s1 + dt), (s2, s2 + dt)).value

    mixed = (cross(x1 + h, x2 + h) - cross(x1 + h, x2 - h) - cross(x1 - h, x2 + h) + cross(x1 - h, x2 - h)) / (4 * h * h)
    fd = mixed / dt ** 2
    grid = TimeGrid.uniform(0.0, 1.0, 8)
    t = a_terms(base_params, BrownianPath.frozen(grid, [x1]), BrownianPath.frozen(grid, [x2]), s1, s2, 0.0)
    assert t.a1 == pytest.approx(fd, rel=1e-3)


def test_a2_closed_form_for_frozen_paths(base_params):
    grid = TimeGrid.uniform(0.0, 1.0, 8)
    c1, c2, s1 = 0.7, -0.4, 0.25
    t = a_terms(base_params, BrownianPath.frozen(grid, [c1]), BrownianPath.frozen(grid, [c2]), s1, 0.5, 0.0)
    lw = time_line_weight(0.75, s1, 0.0, 1.0)
    gx = lambda a, b: q_family(base_params, np.array([a]), np.array([b]), grad=True).grad_x[0]
    assert t.a2[0] == pytest.approx(lw * (gx(c1, c1) + gx(c1, c2)), rel=1e-12)
    assert t.bilinear() == pytest.approx(t.a1 + t.a2[0] * t.a3[0])


def test_bridge_variance():
    bv = bridge_variance([0.0, 0.5, 1.0], [0.0, 0.25])
    assert np.allclose(bv, [[0.1875], [0.1875]])
