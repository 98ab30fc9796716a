import numpy as np
import pytest
from oracles import lasso_fista, random_line

from robust_si.errors import EmptyRegion, InputError
from robust_si.huberized_lasso import (LassoSolution, hl_p_value, hl_truncation_interval, lasso_solve,
                                       project_out_design)
from robust_si.inference import (TestDirection, analyze_instance, build_eta, conditional_line, detect_outliers,
                                 naive_p)
from robust_si.model import DataLine, Dataset, Huber, Threshold, default_window
from robust_si.numerics import IntervalSet


def _instance(rng, n=15, p=2, shifted=3, shift=4.0):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    y = X @ np.r_[1.0, np.full(p, 2.0)] + rng.standard_normal(n)
    y[:shifted] += shift
    return X, y


def _objective(sol):
    r = sol.y_tilde - sol.proj @ sol.u_hat
    return 0.5 * float(r @ r) + sol.lam * float(np.abs(sol.u_hat).sum())


def test_project_out_design_examples():
    y_t, P = project_out_design(np.eye(4), np.arange(4.0))
    np.testing.assert_allclose(P, 0.0, atol=1e-12)
    np.testing.assert_allclose(y_t, 0.0, atol=1e-12)
    y_t, _ = project_out_design(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(y_t, [-1.0, 0.0, 1.0], atol=1e-12)
    rng = np.random.default_rng(0)
    _, P = project_out_design(rng.standard_normal((10, 3)), rng.standard_normal(10))
    np.testing.assert_allclose(P @ P, P, atol=1e-9)
    np.testing.assert_allclose(P, P.T, atol=1e-15)


def test_lasso_examples():
    rng = np.random.default_rng(1)
    X, y = _instance(rng)
    y_t, P = project_out_design(X, y)
    sol = lasso_solve(y_t, P, float(np.max(np.abs(P.T @ y_t))) + 1e-9)
    assert sol.active == () and not np.any(sol.u_hat)
    sol = lasso_solve(np.array([3.0, 0.0]), np.eye(2), 1.0)
    np.testing.assert_allclose(sol.u_hat, [2.0, 0.0])
    assert sol.active == (0,) and list(sol.signs) == [1.0]
    with pytest.raises(InputError):
        lasso_solve(np.zeros(2), np.eye(2), 0.0)


def test_lasso_matches_proximal_gradient_oracle():
    rng = np.random.default_rng(2)
    for _ in range(10):
        X, y = _instance(rng, n=int(rng.integers(8, 25)))
        y_t, P = project_out_design(X, y)
        lam = float(rng.uniform(0.5, 3.0))
        sol = lasso_solve(y_t, P, lam)
        _, ref = lasso_fista(y_t, P, lam)
        assert abs(_objective(sol) - ref) <= 1e-7 * (1 + ref)
        assert sol.kkt_violation() <= 1e-7


def _fresh_signature(P, line, z, lam, u0):
    sol = lasso_solve(P @ line(z), P, lam, u0=u0)
    return sol.active, tuple(sol.signs), sol.u_hat


def test_interval_grid_oracle():
    rng = np.random.default_rng(3)
    lam = 2.0
    done = 0
    for _ in range(10):
        X, y = _instance(rng, n=12)
        y_t, P = project_out_design(X, y)
        sol = lasso_solve(y_t, P, lam)
        if not sol.active:
            continue
        line, s = random_line(rng, y)
        interval = hl_truncation_interval(sol, line)
        assert interval.contains(line.z_obs)
        assert len(interval) == 1
        lo, hi = interval.inf, interval.sup
        # grid over the interval plus a margin on each side
        span = (hi - lo) if np.isfinite(hi - lo) else 10 * s
        g_lo = lo - 0.5 * span if np.isfinite(lo) else line.z_obs - 10 * s
        g_hi = hi + 0.5 * span if np.isfinite(hi) else line.z_obs + 10 * s
        zs = np.linspace(g_lo, g_hi, 10_000)
        u = sol.u_hat
        truth = np.empty(zs.size, dtype=bool)
        for k, z in enumerate(zs):
            act, sg, u = _fresh_signature(P, line, z, lam, u)
            truth[k] = act == sol.active and sg == tuple(sol.signs)
        far = interval.distance_to_boundary(zs) > 1e-9
        assert np.array_equal(interval.contains_many(zs)[far], truth[far])
        done += 1
        if done == 3:
            break
    assert done == 3


def test_interval_errors():
    sol = LassoSolution(np.zeros(2), (), np.array([]), 1.0, np.eye(2), np.zeros(2))
    with pytest.raises(InputError):
        hl_truncation_interval(sol, DataLine(np.zeros(2), np.ones(2), 0.0))
    sol = lasso_solve(np.array([3.0, 0.0]), np.eye(2), 1.0)
    with pytest.raises(InputError):
        hl_truncation_interval(sol, DataLine(np.array([3.0, 0.0]), np.array([0.0, 1.0]), 0.0),
                               TestDirection(np.array([0.0, 1.0]), 1.0, 1))
    # z_obs on a line that leaves the support
    with pytest.raises(EmptyRegion):
        hl_truncation_interval(sol, DataLine(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 0.0))


def test_hl_p_value_examples():
    d = TestDirection(np.array([1.0]), 1.0, 0)
    for z in (0.3, -1.7, 2.5):
        assert hl_p_value(d, IntervalSet.real_line(), z) == pytest.approx(naive_p(d, z), abs=1e-10)
    assert hl_p_value(d, IntervalSet.interval(-2.0, 2.0), 0.0) == pytest.approx(1.0, abs=1e-12)


def test_detection_equivalence_and_containment():
    rng = np.random.default_rng(4)
    lam = 2.0
    checked = 0
    for _ in range(40):
        X, y = _instance(rng, n=20, shifted=4, shift=float(rng.choice([-1, 1]) * 4.0))
        ds = Dataset(X, y, np.eye(20))
        observed = detect_outliers(ds, Huber(lam), Threshold(lam))
        y_t, P = project_out_design(X, y)
        sol = lasso_solve(y_t, P, lam)
        assert sol.active == observed.indices
        if not observed:
            continue
        i = observed.indices[0]
        report = analyze_instance(ds, Huber(lam), Threshold(lam), i, observed)
        direction = build_eta(X, observed, i)
        line = conditional_line(ds, direction)
        window = default_window(line.z_obs, direction.sigma_eta)
        hl = hl_truncation_interval(sol, line) & IntervalSet.interval(*window)
        for lo, hi in hl:
            assert any(a - 1e-7 <= lo and hi <= b + 1e-7 for a, b in report.truncation)
        checked += 1
    assert checked >= 20
