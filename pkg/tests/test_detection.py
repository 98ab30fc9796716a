import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import LadVertexOracle, detect_oracle, random_line, regression_instance

from robust_si.detection import (OutlierSet, _sign_region, detect, detection_function_region,
                                 event_region_over_path, rule_callback, threshold_callback, threshold_region,
                                 topk_region)
from robust_si.errors import CallbackInconsistent, EmptyRegion, InputError, TieAtBoundary
from robust_si.lad_path import lad_path
from robust_si.model import ResidualPath, Threshold, TopK, evaluate_path, residual_path
from robust_si.numerics import interval_complement_within


def _grid_agrees(region, zs, truth, skip_tol=1e-9):
    inside = region.contains_many(zs)
    far = region.distance_to_boundary(zs) > skip_tol
    return np.array_equal(inside[far], truth[far])


def _random_residual_path(rng, n, T=4, lo=-5.0, hi=5.0):
    knots = np.concatenate([[lo], np.sort(rng.uniform(lo, hi, T - 1)), [hi]])
    f = rng.standard_normal((T, n)) * 2
    g = rng.standard_normal((T, n))
    return ResidualPath(knots[1:-1], f, g, (lo, hi))


def test_detect_examples():
    assert detect(np.array([0.5, -2.0, 0.1]), Threshold(1.0)).indices == (1,)
    assert detect(np.array([3.0, -1.0, 2.0]), TopK(2)).indices == (0, 2)
    with pytest.raises(TieAtBoundary):
        detect(np.array([3.0, -2.0, 2.0]), TopK(2))
    with pytest.raises(InputError):
        detect(np.array([1.0, 2.0]), TopK(3))


def test_detect_topk_matches_sort():
    rng = np.random.default_rng(0)
    for _ in range(200):
        r = rng.standard_normal(int(rng.integers(2, 30)))
        K = int(rng.integers(1, r.size + 1))
        assert detect(r, TopK(K)).indices == detect_oracle(r, TopK(K))


def test_outlier_set_canonical():
    O = OutlierSet((3, 1))
    assert O.indices == (1, 3) and 3 in O and len(O) == 2
    assert O.complement(5) == [0, 2, 4]
    with pytest.raises(InputError):
        OutlierSet((1, 1))
    with pytest.raises(InputError):
        O.check_bounds(3)


def test_threshold_region_examples():
    seg = (np.array([0.0]), np.array([1.0]), -2.0, 2.0)
    assert threshold_region(seg, 0, 1.0).to_list() == [[-2.0, -1.0], [1.0, 2.0]]
    seg = (np.array([1.5]), np.array([0.0]), -2.0, 2.0)
    assert threshold_region(seg, 0, 1.0).to_list() == [[-2.0, 2.0]]
    seg = (np.array([0.5]), np.array([0.0]), -2.0, 2.0)
    assert not threshold_region(seg, 0, 1.0)


def test_threshold_region_grid_oracle():
    rng = np.random.default_rng(1)
    zs = np.linspace(-3, 4, 10_000)
    for _ in range(50):
        f, g, xi = rng.standard_normal(), rng.standard_normal(), rng.uniform(0.1, 2)
        region = threshold_region((np.array([f]), np.array([g]), -3.0, 4.0), 0, xi)
        assert _grid_agrees(region, zs, np.abs(f + g * zs) >= xi)


def test_topk_region_examples():
    seg = (np.array([0.7, 0.7]), np.array([-0.3, -0.3]), -1.0, 1.0)
    assert topk_region(seg, 0, 1).to_list() == [[-1.0, 1.0]]
    seg = (np.array([0.0, 1.0]), np.array([1.0, 0.0]), -3.0, 3.0)
    assert topk_region(seg, 0, 1).to_list() == [[-3.0, -1.0], [1.0, 3.0]]
    # alpha = 0, beta < 0: r_i = 1 - z, r_i' = 1 + z, so |r_i| >= |r_i'| iff z <= 0
    seg = (np.array([1.0, 1.0]), np.array([-1.0, 1.0]), -3.0, 3.0)
    assert topk_region(seg, 0, 1).to_list() == [[-3.0, 0.0]]
    # parabola without real roots: the sign is constant over the segment
    seg = (np.array([2.0, 0.0]), np.array([0.0, 0.5]), -1.0, 1.0)
    assert topk_region(seg, 0, 1).to_list() == [[-1.0, 1.0]]
    assert not topk_region(seg, 1, 0)


def test_topk_region_grid_oracle_and_symmetry():
    rng = np.random.default_rng(2)
    zs = np.linspace(-5, 5, 10_000)
    for _ in range(50):
        f, g = rng.standard_normal(2) * 2, rng.standard_normal(2)
        seg = (f, g, -5.0, 5.0)
        W = topk_region(seg, 0, 1)
        ri, rj = np.abs(f[0] + g[0] * zs), np.abs(f[1] + g[1] * zs)
        assert _grid_agrees(W, zs, ri >= rj)
        # swapping the pair gives the complement away from the boundary
        swapped = topk_region(seg, 1, 0)
        comp = interval_complement_within(W, -5.0, 5.0)
        far = (W.distance_to_boundary(zs) > 1e-9) & (swapped.distance_to_boundary(zs) > 1e-9)
        assert np.array_equal(swapped.contains_many(zs)[far], comp.contains_many(zs)[far])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.integers(-20, 20), st.floats(1e-3, 1e3))
def test_topk_region_scale_invariant(v, k, c):
    f, g = np.array(v[:2]), np.array(v[2:])
    a = topk_region((f, g, -4.0, 4.0), 0, 1)
    # powers of two scale without rounding, so the region is identical
    b = topk_region((2.0**k * f, 2.0**k * g, -4.0, 4.0), 0, 1)
    assert a.to_list() == b.to_list()
    # other factors round the root quotients only
    c_reg = topk_region((c * f, c * g, -4.0, 4.0), 0, 1)
    zs = np.linspace(-4, 4, 1001)
    far = (a.distance_to_boundary(zs) > 1e-9) & (c_reg.distance_to_boundary(zs) > 1e-9)
    assert np.array_equal(a.contains_many(zs)[far], c_reg.contains_many(zs)[far])


def test_event_region_single_segment_threshold():
    f, g = np.array([0.0, 0.5]), np.array([1.0, 0.25])
    res = ResidualPath(np.array([]), f[None], g[None], (-4.0, 4.0))
    region = event_region_over_path(res, Threshold(1.0), OutlierSet((0,)))
    seg = (f, g, -4.0, 4.0)
    expect = threshold_region(seg, 0, 1.0) & interval_complement_within(threshold_region(seg, 1, 1.0), -4.0, 4.0)
    assert region.to_list() == expect.to_list()


@pytest.mark.parametrize("rule", [Threshold(1.5), TopK(2)])
def test_event_region_grid_oracle_on_random_paths(rule):
    rng = np.random.default_rng(3)
    zs = np.linspace(-5, 5, 10_000)
    checked = 0
    for _ in range(60):
        res = _random_residual_path(rng, 6)
        z_obs = float(rng.uniform(-5, 5))
        observed = detect_oracle(evaluate_path(res, z_obs), rule)
        if not observed:
            continue
        region = event_region_over_path(res, rule, OutlierSet(observed), z_obs=z_obs)
        assert region.contains(z_obs, tol=1e-9)
        R = np.stack([evaluate_path(res, z) for z in zs])
        truth = np.array([detect_oracle(r, rule) == observed for r in R])
        assert _grid_agrees(region, zs, truth)
        checked += 1
    assert checked >= 30


def test_event_region_against_fresh_lad_detection():
    rng = np.random.default_rng(4)
    rule = Threshold(2.0)
    for _ in range(5):
        X, y = regression_instance(rng, 9, 2, outliers=1, shift=6.0)
        line, s = random_line(rng, y)
        window = (line.z_obs - 5 * s, line.z_obs + 5 * s)
        path = lad_path(X, line, window)
        res = residual_path(line, path, X)
        observed = detect(evaluate_path(res, line.z_obs), rule)
        if not observed:
            continue
        region = event_region_over_path(res, rule, observed, z_obs=line.z_obs)
        zs = np.linspace(*window, 10_000)
        Y = line.a[:, None] + np.outer(line.b, zs)
        R, unique = LadVertexOracle(X).solve(Y)
        truth = np.array([detect(R[:, k], rule) == observed for k in range(zs.size)])
        keep = unique & (region.distance_to_boundary(zs) > 1e-9)
        assert np.array_equal(region.contains_many(zs)[keep], truth[keep])


def test_event_region_requires_nonempty_and_contains_z_obs():
    res = ResidualPath(np.array([]), np.array([[0.0, 0.5]]), np.array([[1.0, 0.0]]), (-4.0, 4.0))
    with pytest.raises(InputError):
        event_region_over_path(res, Threshold(1.0), OutlierSet(()))
    with pytest.raises(EmptyRegion):
        event_region_over_path(res, Threshold(1.0), OutlierSet((0,)), z_obs=0.0)
    with pytest.raises(InputError):
        event_region_over_path(res, TopK(1), OutlierSet((0, 1)))


@pytest.mark.parametrize("rule", [Threshold(1.0), TopK(2)])
def test_callback_route_matches_specialised_assembly(rule):
    rng = np.random.default_rng(5)
    done = 0
    for _ in range(40):
        res = _random_residual_path(rng, 5)
        z_obs = float(rng.uniform(-5, 5))
        observed = detect_oracle(evaluate_path(res, z_obs), rule)
        if not observed:
            continue
        a = event_region_over_path(res, rule, OutlierSet(observed), z_obs=z_obs)
        b = detection_function_region(res, rule_callback(rule), OutlierSet(observed), z_obs=z_obs)
        if isinstance(rule, Threshold):
            assert a.to_list() == b.to_list()
        else:
            # roots come from different formulas, so endpoints agree to rounding
            assert len(a) == len(b)
            np.testing.assert_allclose(a.to_list(), b.to_list(), rtol=1e-12, atol=1e-12)
        done += 1
        if done == 20:
            break
    assert done == 20


def test_callback_without_roots():
    res = ResidualPath(np.array([]), np.array([[0.0, 0.0]]), np.array([[0.0, 0.0]]), (-1.0, 1.0))

    def always(sign):
        return lambda t, i, f, g, lo, hi: ([], sign if i == 0 else -1)

    kept = detection_function_region(res, always(1), OutlierSet((0,)))
    assert kept.to_list() == [[-1.0, 1.0]]
    with pytest.raises(EmptyRegion):
        detection_function_region(res, always(-1), OutlierSet((0,)))


def test_callback_inconsistent():
    with pytest.raises(CallbackInconsistent):
        _sign_region([0.5, 0.2], 1, 0.0, 1.0, True)
    with pytest.raises(CallbackInconsistent):
        _sign_region([2.0], 1, 0.0, 1.0, True)
    with pytest.raises(CallbackInconsistent):
        _sign_region([], 0, 0.0, 1.0, True)
    res = ResidualPath(np.array([]), np.array([[0.0]]), np.array([[1.0]]), (-1.0, 1.0))
    with pytest.raises(CallbackInconsistent):
        detection_function_region(res, lambda *args: ([5.0], 1), OutlierSet((0,)))


def test_sign_region_alternates_from_midpoint():
    # roots at 0.2 and 0.8, negative at the midpoint
    region = _sign_region([0.2, 0.8], -1, 0.0, 1.0, want_positive=True)
    assert region.to_list() == [[0.0, 0.2], [0.8, 1.0]]


def test_threshold_callback_sign_at_midpoint_root():
    phi = threshold_callback(1.0)
    roots, sign = phi(0, 0, np.array([1.0]), np.array([1.0]), -1.0, 1.0)
    assert roots == [0.0] and sign == 1
