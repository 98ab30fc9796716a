"""Selective p-values and confidence intervals for detected outliers.

The statistic for instance ``i`` is its residual against the least-squares
fit on the non-flagged rows, ``z = eta'y``. Conditioning on the nuisance part
of ``y`` leaves a line ``y(z) = a + b z``; the detection event restricted to
that line is the truncation region, and ``z`` is a normal variable truncated
to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .detection import OutlierSet, detect, event_region_over_path
from .errors import DegenerateDirection, InputError, NonMonotonePivot
from .huber_path import huber_path, solve_huber
from .lad_path import lad_path, solve_lad
from .model import (LAD, DataLine, Dataset, DetectionRule, EstimatorSpec, Huber, PiecewisePath,
                    TopK, default_window, residual_path)
from .numerics import (GaussianParams, IntervalSet, least_squares_apply, normal_sf, truncated_normal_logcdf,
                       truncated_normal_logsf)

MIN_SIGMA_ETA2 = 1e-14


@dataclass(frozen=True, eq=False)
class TestDirection:
    eta: np.ndarray
    sigma_eta2: float
    target_index: int

    __test__ = False

    @property
    def sigma_eta(self) -> float:
        return math.sqrt(self.sigma_eta2)


@dataclass(frozen=True, eq=False)
class SelectiveReport:
    target_index: int
    z_obs: float
    naive_p: float
    bonferroni_p: float
    selective_p: float
    ci: tuple[float, float]
    truncation: IntervalSet
    mass_outside_window_bound: float


def build_eta(X: np.ndarray, outliers: OutlierSet, i: int, Sigma: np.ndarray | None = None) -> TestDirection:
    """Direction with ``eta'y = y_i - x_i' LS(X[-O], y[-O])``.

    Flagged rows are zeroed rather than deleted, so ``eta`` vanishes on them
    apart from coordinate ``i``. ``Sigma`` defaults to the identity.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if i not in outliers:
        raise InputError(f"instance {i} is not among the detected outliers")
    outliers.check_bounds(n)
    keep = np.ones(n)
    keep[list(outliers)] = 0.0
    X_clean = X * keep[:, None]
    if not np.any(X_clean):
        raise DegenerateDirection("every row carrying information is flagged")
    # ((X^{-O})')^+ x_i is the weight vector of the clean fit evaluated at x_i
    w = least_squares_apply(X_clean.T, X[i]) * keep
    eta = -w
    eta[i] += 1.0
    S = np.eye(n) if Sigma is None else np.asarray(Sigma, dtype=float)
    s2 = float(eta @ S @ eta)
    if not s2 > MIN_SIGMA_ETA2:
        raise DegenerateDirection(f"eta' Sigma eta = {s2} is not positive")
    return TestDirection(eta, s2, int(i))


def conditional_line(dataset: Dataset, direction: TestDirection) -> DataLine:
    """Split ``y`` into its component along ``Sigma eta`` and the part independent of ``eta'y``."""
    b = dataset.Sigma @ direction.eta / direction.sigma_eta2
    z_obs = float(direction.eta @ dataset.y)
    a = dataset.y - b * z_obs
    return DataLine(a, b, z_obs)


def fit(X: np.ndarray, y: np.ndarray, estimator: EstimatorSpec) -> np.ndarray:
    if isinstance(estimator, LAD):
        return solve_lad(X, y)[0]
    if isinstance(estimator, Huber):
        return solve_huber(X, y, estimator.delta)[0]
    raise TypeError(f"unknown estimator {estimator!r}")


def estimator_path(X: np.ndarray, line: DataLine, estimator: EstimatorSpec, window,
                   window_mult: float = 20.0) -> PiecewisePath:
    if isinstance(estimator, LAD):
        return lad_path(X, line, window, window_mult=window_mult)
    if isinstance(estimator, Huber):
        return huber_path(X, line, estimator.delta, window, window_mult=window_mult)
    raise TypeError(f"unknown estimator {estimator!r}")


def detect_outliers(dataset: Dataset, estimator: EstimatorSpec, rule: DetectionRule) -> OutlierSet:
    beta = fit(dataset.X, dataset.y, estimator)
    return detect(dataset.y - dataset.X @ beta, rule)


def mass_outside_window(window_mult: float) -> float:
    """Bound on the null mass of ``eta'Y`` outside the working window."""
    return 2.0 * normal_sf(window_mult)


def truncation_region(dataset: Dataset, estimator: EstimatorSpec, rule: DetectionRule,
                      direction: TestDirection, window_mult: float = 20.0,
                      observed: OutlierSet | None = None) -> IntervalSet:
    """Values of ``z`` on the conditional line, inside the window, that reproduce the observed detection."""
    if window_mult < 5:
        raise InputError(f"window multiplier must be at least 5, got {window_mult}")
    if observed is None:
        observed = detect_outliers(dataset, estimator, rule)
    line = conditional_line(dataset, direction)
    window = default_window(line.z_obs, direction.sigma_eta, window_mult)
    path = estimator_path(dataset.X, line, estimator, window, window_mult)
    res = residual_path(line, path, dataset.X)
    return event_region_over_path(res, rule, observed, z_obs=line.z_obs)


def _null(direction: TestDirection, mean: float = 0.0) -> GaussianParams:
    return GaussianParams(mean, direction.sigma_eta2)


def selective_p(direction: TestDirection, trunc: IntervalSet, z_obs: float) -> float:
    """Two-sided selective p-value ``2 min(pi, 1 - pi)``, ``pi`` the truncated upper tail at ``z_obs``."""
    # log space keeps far-tail regions usable
    params = _null(direction)
    upper = math.exp(truncated_normal_logsf(params, trunc, z_obs))
    lower = math.exp(truncated_normal_logcdf(params, trunc, z_obs))
    return float(min(1.0, 2.0 * min(upper, lower)))


def selective_pivot(direction: TestDirection, trunc: IntervalSet, z_obs: float, mean: float = 0.0) -> float:
    """Truncated-normal CDF at ``z_obs``; uniform under the null given the selection."""
    return math.exp(truncated_normal_logcdf(_null(direction, mean), trunc, z_obs))


def _solve_mean(fn, z_obs: float, sd: float) -> float:
    """Root in ``m`` of an increasing function, bracketed at ``z_obs +- 40 sd`` and widened as needed."""
    lo, hi = z_obs - 40.0 * sd, z_obs + 40.0 * sd
    width = 40.0 * sd
    f_lo, f_hi = fn(lo), fn(hi)
    for _ in range(60):
        if f_lo <= 0.0 <= f_hi:
            break
        width *= 2.0
        if f_lo > 0.0:
            lo = z_obs - width
            f_lo = fn(lo)
        if f_hi < 0.0:
            hi = z_obs + width
            f_hi = fn(hi)
    else:
        raise NonMonotonePivot("pivot did not cross the target level within the search bracket")
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    return brentq(fn, lo, hi, xtol=1e-9 * sd, rtol=4 * np.finfo(float).eps, maxiter=500)


def selective_ci(direction: TestDirection, trunc: IntervalSet, z_obs: float, alpha: float) -> tuple[float, float]:
    """Selective confidence interval for ``eta' mu`` at level ``1 - alpha``.

    The truncated CDF at ``z_obs`` decreases in the mean; the lower end solves
    ``sf = alpha/2`` and the upper end ``cdf = alpha/2``, both in log space.
    """
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    sd = direction.sigma_eta
    target = math.log(alpha / 2.0)

    def lower_fn(m):
        # increasing in m
        return truncated_normal_logsf(_null(direction, m), trunc, z_obs) - target

    def upper_fn(m):
        # decreasing in m, negated
        return target - truncated_normal_logcdf(_null(direction, m), trunc, z_obs)

    lo = _solve_mean(lower_fn, z_obs, sd)
    hi = _solve_mean(upper_fn, z_obs, sd)
    if lo > hi + 1e-6 * sd:
        raise NonMonotonePivot(f"selective interval endpoints out of order: {lo} > {hi}")
    return (float(min(lo, hi)), float(hi))


def naive_p(direction: TestDirection, z_obs: float) -> float:
    return float(min(1.0, 2.0 * normal_sf(abs(z_obs) / direction.sigma_eta)))


def bonferroni_p(naive: float, n: int, k_detected: int) -> float:
    """``min(1, C(n, k) * naive)``; the binomial coefficient moves to log space once it overflows a float."""
    if not 1 <= k_detected <= n:
        raise InputError(f"need 1 <= k <= n, got k={k_detected}, n={n}")
    if naive <= 0.0:
        return 0.0
    try:
        return float(min(1.0, float(math.comb(n, k_detected)) * naive))
    except OverflowError:
        pass
    log_c = math.lgamma(n + 1) - math.lgamma(k_detected + 1) - math.lgamma(n - k_detected + 1)
    return float(min(1.0, math.exp(log_c + math.log(naive))))


def bonferroni_k(rule: DetectionRule, observed: OutlierSet) -> int:
    return rule.K if isinstance(rule, TopK) else len(observed)


def analyze_instance(dataset: Dataset, estimator: EstimatorSpec, rule: DetectionRule, i: int,
                     observed: OutlierSet, alpha: float = 0.05, window_mult: float = 20.0) -> SelectiveReport:
    """Full report for flagged instance ``i``."""
    direction = build_eta(dataset.X, observed, i, dataset.Sigma)
    z_obs = float(direction.eta @ dataset.y)
    trunc = truncation_region(dataset, estimator, rule, direction, window_mult, observed)
    naive = naive_p(direction, z_obs)
    return SelectiveReport(
        target_index=int(i),
        z_obs=z_obs,
        naive_p=naive,
        bonferroni_p=bonferroni_p(naive, dataset.n, bonferroni_k(rule, observed)),
        selective_p=selective_p(direction, trunc, z_obs),
        ci=selective_ci(direction, trunc, z_obs, alpha),
        truncation=trunc,
        mass_outside_window_bound=mass_outside_window(window_mult),
    )


def analyze(dataset: Dataset, estimator: EstimatorSpec, rule: DetectionRule, alpha: float = 0.05,
            window_mult: float = 20.0) -> list[SelectiveReport]:
    """Reports for every detected outlier, ordered by instance index."""
    observed = detect_outliers(dataset, estimator, rule)
    return [analyze_instance(dataset, estimator, rule, i, observed, alpha, window_mult) for i in observed]


__all__ = [
    "TestDirection", "SelectiveReport", "build_eta", "conditional_line", "truncation_region",
    "selective_p", "selective_ci", "naive_p", "bonferroni_p", "analyze", "analyze_instance",
    "detect_outliers", "fit", "estimator_path", "selective_pivot", "mass_outside_window",
]
