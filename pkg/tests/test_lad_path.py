import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import lad_linprog, random_line, regression_instance

from robust_si.errors import RankDeficiencyWarning, WindowTooSmall
from robust_si.lad_path import lad_objective, lad_path, solve_lad
from robust_si.model import DataLine, evaluate_path


def test_median_of_three():
    beta, _ = solve_lad(np.ones((3, 1)), np.array([1.0, 2.0, 10.0]))
    assert beta[0] == pytest.approx(2.0, abs=1e-12)
    assert lad_objective(np.ones((3, 1)), np.array([1.0, 2.0, 10.0]), beta) == pytest.approx(9.0)


def test_exact_fit():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((8, 3))
    w = np.array([1.0, -2.0, 0.5])
    beta, _ = solve_lad(X, X @ w)
    assert lad_objective(X, X @ w, beta) <= 1e-8
    np.testing.assert_allclose(X @ beta, X @ w, atol=1e-8)


def test_matches_linprog_and_basis_is_feasible():
    rng = np.random.default_rng(1)
    for _ in range(20):
        X, y = regression_instance(rng, 15, 3, outliers=2)
        beta, basis = solve_lad(X, y)
        ref, _ = lad_linprog(X, y)
        assert abs(lad_objective(X, y, beta) - ref) <= 1e-7
        assert len(basis.basic_indices) == 15
        assert np.min(basis.solve(y)) >= -1e-9


def test_rank_deficient_design_warns():
    X = np.column_stack([np.ones(6), np.ones(6)])
    with pytest.warns(RankDeficiencyWarning):
        solve_lad(X, np.arange(6.0))


def test_constant_line_single_segment():
    rng = np.random.default_rng(2)
    X, y = regression_instance(rng, 10, 2)
    path = lad_path(X, DataLine(y, np.zeros(10), 0.0), (-5.0, 5.0))
    assert path.n_segments == 1
    np.testing.assert_allclose(path.slopes[0], 0.0, atol=1e-12)


def test_median_path_of_three():
    line = DataLine(np.zeros(3), np.array([1.0, 0.0, 0.0]), 0.0)
    path = lad_path(np.ones((3, 1)), line, (-10.0, 10.0))
    assert evaluate_path(path, -1.0)[0] == pytest.approx(0.0, abs=1e-12)
    assert evaluate_path(path, 5.0)[0] == pytest.approx(0.0, abs=1e-12)


def test_window_must_contain_z_obs():
    line = DataLine(np.zeros(3), np.array([1.0, 0.0, 0.0]), 20.0)
    with pytest.raises(WindowTooSmall):
        lad_path(np.ones((3, 1)), line, (-1.0, 1.0))


def test_path_objective_matches_fresh_solves():
    rng = np.random.default_rng(3)
    for _ in range(5):
        X, y = regression_instance(rng, 12, 2)
        line, s = random_line(rng, y)
        window = (line.z_obs - 20 * s, line.z_obs + 20 * s)
        path = lad_path(X, line, window)
        for z in rng.uniform(*window, 100):
            ref, _ = lad_linprog(X, line(z))
            assert abs(lad_objective(X, line(z), evaluate_path(path, z)) - ref) <= 1e-6


def test_path_objective_convex_in_z():
    rng = np.random.default_rng(4)
    X, y = regression_instance(rng, 12, 3)
    line, s = random_line(rng, y)
    window = (line.z_obs - 10 * s, line.z_obs + 10 * s)
    path = lad_path(X, line, window)
    zs = np.linspace(*window, 2001)
    f = np.array([lad_objective(X, line(z), evaluate_path(path, z)) for z in zs])
    second = f[:-2] - 2 * f[1:-1] + f[2:]
    assert np.min(second) >= -1e-8 * (1 + np.max(np.abs(f)))


def test_path_continuity():
    rng = np.random.default_rng(5)
    X, y = regression_instance(rng, 14, 3, outliers=3)
    line, s = random_line(rng, y)
    path = lad_path(X, line, (line.z_obs - 20 * s, line.z_obs + 20 * s))
    assert path.n_segments > 1
    for t, z in enumerate(path.breakpoints):
        left = path.intercepts[t] + path.slopes[t] * z
        right = path.intercepts[t + 1] + path.slopes[t + 1] * z
        np.testing.assert_allclose(left, right, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 12), st.integers(1, 3))
def test_path_optimal_at_random_points(seed, n, d):
    rng = np.random.default_rng(seed)
    X, y = regression_instance(rng, n, d)
    line, s = random_line(rng, y)
    window = (line.z_obs - 20 * s, line.z_obs + 20 * s)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        path = lad_path(X, line, window)
    for z in rng.uniform(*window, 5):
        ref, _ = lad_linprog(X, line(z))
        assert abs(lad_objective(X, line(z), evaluate_path(path, z)) - ref) <= 1e-6 * (1 + ref)
