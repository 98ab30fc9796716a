"""Synthetic location-shift data and Monte Carlo FPR / TPR harnesses.

Every attempt ``k`` of a run draws from ``default_rng([seed, k])``, so results
do not depend on scheduling. Attempts without a usable detection are skipped
and the next index is tried; accepted attempts are consumed in index order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .detection import OutlierSet
from .errors import DetectionStarvation, InputError, NumericalFailure, TieAtBoundary
from .huberized_lasso import hl_p_value, hl_truncation_interval, lasso_solve, project_out_design
from .inference import (bonferroni_k, bonferroni_p, build_eta, conditional_line, detect_outliers,
                        naive_p, selective_p, selective_pivot, truncation_region)
from .model import LAD, Dataset, DetectionRule, EstimatorSpec, Huber, Threshold, default_window
from .numerics import IntervalSet

MAX_ATTEMPTS = 10**6
THREADS_ENV = "ROBUST_SI_THREADS"


def default_beta(p: int) -> np.ndarray:
    """Intercept and slopes ``(1, 2, 1, 2, ...)``."""
    return np.array([1.0 if j % 2 == 0 else 2.0 for j in range(p + 1)])


@dataclass(frozen=True, eq=False)
class SimConfig:
    n: int = 20
    p: int = 5
    beta_star: np.ndarray | None = None
    shift: np.ndarray | None = None
    sigma2: float = 1.0
    estimator: EstimatorSpec = field(default_factory=LAD)
    rule: DetectionRule = field(default_factory=lambda: Threshold(1.0))
    alpha: float = 0.05
    trials: int = 1000
    seed: int = 0
    window_mult: float = 20.0

    def __post_init__(self):
        if self.trials < 1:
            raise InputError("trials must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must lie in (0, 1)")
        beta = default_beta(self.p) if self.beta_star is None else np.asarray(self.beta_star, dtype=float)
        if beta.shape != (self.p + 1,):
            raise InputError(f"beta_star must have length p + 1 = {self.p + 1}")
        shift = np.zeros(self.n) if self.shift is None else np.asarray(self.shift, dtype=float)
        if shift.shape != (self.n,):
            raise InputError(f"shift must have length n = {self.n}")
        object.__setattr__(self, "beta_star", beta)
        object.__setattr__(self, "shift", shift)


def _stream(cfg: SimConfig, attempt: int) -> np.random.Generator:
    return np.random.default_rng([int(cfg.seed) & (2**64 - 1), int(attempt)])


def _draw(cfg: SimConfig, rng: np.random.Generator) -> Dataset:
    X = np.column_stack([np.ones(cfg.n), rng.standard_normal((cfg.n, cfg.p))])
    eps = rng.standard_normal(cfg.n) * np.sqrt(cfg.sigma2)
    y = X @ cfg.beta_star + cfg.shift + eps
    return Dataset.with_noise_variance(X, y, cfg.sigma2)


def generate_trial(cfg: SimConfig, trial_index: int) -> Dataset:
    """Dataset of attempt ``trial_index``; identical for identical ``(seed, trial_index)``."""
    return _draw(cfg, _stream(cfg, trial_index))


@dataclass(frozen=True)
class TrialOutcome:
    """P-values of one accepted attempt. ``pivot`` is the null truncated CDF at ``z_obs``."""

    index: int
    naive_p: float
    bonferroni_p: float
    selective_p: float
    pivot: float
    extra_p: float = float("nan")
    contained: bool = True


def _test(ds: Dataset, cfg: SimConfig, observed: OutlierSet, i: int):
    direction = build_eta(ds.X, observed, i, ds.Sigma)
    z_obs = float(direction.eta @ ds.y)
    trunc = truncation_region(ds, cfg.estimator, cfg.rule, direction, cfg.window_mult, observed)
    naive = naive_p(direction, z_obs)
    return direction, z_obs, trunc, naive


def _fpr_attempt(cfg: SimConfig, attempt: int):
    rng = _stream(cfg, attempt)
    ds = _draw(cfg, rng)
    try:
        observed = detect_outliers(ds, cfg.estimator, cfg.rule)
    except TieAtBoundary:
        return None
    if len(observed) == 0:
        return None
    i = int(rng.choice(observed.indices))
    direction, z_obs, trunc, naive = _test(ds, cfg, observed, i)
    return TrialOutcome(
        index=i,
        naive_p=naive,
        bonferroni_p=bonferroni_p(naive, ds.n, bonferroni_k(cfg.rule, observed)),
        selective_p=selective_p(direction, trunc, z_obs),
        pivot=selective_pivot(direction, trunc, z_obs),
    )


def _tpr_attempt(cfg: SimConfig, attempt: int):
    rng = _stream(cfg, attempt)
    ds = _draw(cfg, rng)
    target = int(np.flatnonzero(cfg.shift)[0]) if np.any(cfg.shift) else 0
    try:
        observed = detect_outliers(ds, cfg.estimator, cfg.rule)
    except TieAtBoundary:
        return None
    if target not in observed:
        return None
    direction, z_obs, trunc, naive = _test(ds, cfg, observed, target)
    return TrialOutcome(
        index=target,
        naive_p=naive,
        bonferroni_p=bonferroni_p(naive, ds.n, bonferroni_k(cfg.rule, observed)),
        selective_p=selective_p(direction, trunc, z_obs),
        pivot=selective_pivot(direction, trunc, z_obs),
    )


def _hl_attempt(cfg: SimConfig, attempt: int):
    rng = _stream(cfg, attempt)
    ds = _draw(cfg, rng)
    lam = cfg.rule.xi
    observed = detect_outliers(ds, cfg.estimator, cfg.rule)
    y_tilde, proj = project_out_design(ds.X, ds.y)
    sol = lasso_solve(y_tilde, proj, lam)
    true_hits = [i for i in observed if cfg.shift[i] != 0.0]
    if not true_hits:
        return None
    if sol.active != observed.indices:
        # matching failed; reported by the caller rather than silently dropped
        return "mismatch"
    i = int(rng.choice(true_hits))
    direction, z_obs, trunc, naive = _test(ds, cfg, observed, i)
    line = conditional_line(ds, direction)
    hl = hl_truncation_interval(sol, line, direction)
    window = IntervalSet.interval(*default_window(z_obs, direction.sigma_eta, cfg.window_mult))
    return TrialOutcome(
        index=i,
        naive_p=naive,
        bonferroni_p=bonferroni_p(naive, ds.n, len(observed)),
        selective_p=selective_p(direction, trunc, z_obs),
        pivot=selective_pivot(direction, trunc, z_obs),
        extra_p=hl_p_value(direction, hl, z_obs),
        contained=_contained(hl & window, trunc),
    )


def _contained(inner: IntervalSet, outer: IntervalSet, tol: float = 1e-7) -> bool:
    """Whether every piece of ``inner`` lies in a single piece of ``outer``, up to ``tol`` at the ends."""
    for lo, hi in inner:
        if not any(o_lo - tol * (1 + abs(lo)) <= lo and hi <= o_hi + tol * (1 + abs(hi)) for o_lo, o_hi in outer):
            return False
    return True


def worker_count() -> int:
    cap = os.environ.get(THREADS_ENV)
    cpus = os.cpu_count() or 1
    if cap is None:
        return 1
    try:
        return max(1, min(cpus, int(cap)))
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None


def _safe(fn, cfg, attempt):
    try:
        return fn(cfg, attempt)
    except (NumericalFailure, TieAtBoundary) as exc:
        return ("failure", type(exc).__name__, attempt)


def _run(fn: Callable, cfg: SimConfig, max_attempts: int = MAX_ATTEMPTS, workers: int | None = None):
    """Accepted outcomes of attempts ``0, 1, ...`` in index order until ``cfg.trials`` are collected."""
    workers = worker_count() if workers is None else workers
    accepted: list[TrialOutcome] = []
    failures: list[tuple[str, int]] = []
    mismatches = 0
    attempt = 0
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while len(accepted) < cfg.trials:
            if attempt >= max_attempts:
                raise DetectionStarvation(
                    f"only {len(accepted)} of {cfg.trials} trials accepted in {attempt} attempts"
                )
            batch = range(attempt, min(attempt + max(32, 8 * workers), max_attempts))
            if pool is None:
                results = [_safe(fn, cfg, k) for k in batch]
            else:
                results = list(pool.map(_safe, [fn] * len(batch), [cfg] * len(batch), batch))
            for k, res in zip(batch, results):
                attempt = k + 1
                if res is None:
                    continue
                if res == "mismatch":
                    mismatches += 1
                elif isinstance(res, tuple):
                    failures.append((res[1], res[2]))
                else:
                    accepted.append(res)
                if len(accepted) == cfg.trials:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return accepted, attempt, failures, mismatches


def _rate(flags) -> Fraction:
    flags = list(flags)
    return Fraction(sum(bool(f) for f in flags), len(flags))


@dataclass(frozen=True)
class FprResult:
    fpr_naive: float
    fpr_bonf: float
    fpr_plh: float
    attempts: int
    outcomes: tuple[TrialOutcome, ...]
    failures: tuple[tuple[str, int], ...] = ()

    @property
    def pivots(self) -> np.ndarray:
        return np.array([o.pivot for o in self.outcomes])

    @property
    def selective_ps(self) -> np.ndarray:
        return np.array([o.selective_p for o in self.outcomes])


@dataclass(frozen=True)
class TprResult:
    tpr_bonf: float
    tpr_plh: float
    tpr_naive: float
    attempts: int
    outcomes: tuple[TrialOutcome, ...]
    failures: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class HlCompareResult:
    tpr_plh: float
    tpr_hl: float
    containment_failures: int
    detection_mismatches: int
    attempts: int
    outcomes: tuple[TrialOutcome, ...]
    failures: tuple[tuple[str, int], ...] = ()


def run_fpr(cfg: SimConfig, max_attempts: int = MAX_ATTEMPTS, workers: int | None = None) -> FprResult:
    """Null rejection rates of the naive, Bonferroni and selective tests.

    Each accepted attempt tests one detected instance picked with the
    attempt's own generator.
    """
    if np.any(cfg.shift):
        raise InputError("run_fpr needs a zero shift vector")
    out, attempts, failures, _ = _run(_fpr_attempt, cfg, max_attempts, workers)
    a = cfg.alpha
    return FprResult(
        fpr_naive=float(_rate(o.naive_p < a for o in out)),
        fpr_bonf=float(_rate(o.bonferroni_p < a for o in out)),
        fpr_plh=float(_rate(o.selective_p < a for o in out)),
        attempts=attempts,
        outcomes=tuple(out),
        failures=tuple(failures),
    )


def run_tpr(cfg: SimConfig, max_attempts: int = MAX_ATTEMPTS, workers: int | None = None) -> TprResult:
    """Rejection rates for the shifted instance among attempts that detect it."""
    if np.count_nonzero(cfg.shift) > 1:
        raise InputError("run_tpr needs at most one nonzero shift")
    out, attempts, failures, _ = _run(_tpr_attempt, cfg, max_attempts, workers)
    a = cfg.alpha
    return TprResult(
        tpr_bonf=float(_rate(o.bonferroni_p < a for o in out)),
        tpr_plh=float(_rate(o.selective_p < a for o in out)),
        tpr_naive=float(_rate(o.naive_p < a for o in out)),
        attempts=attempts,
        outcomes=tuple(out),
        failures=tuple(failures),
    )


def hl_config(n: int = 50, p: int = 5, lam: float = 3.0, K: int = 10, u: float = 2.0, trials: int = 300,
              seed: int = 0, alpha: float = 0.05) -> SimConfig:
    """Matched configuration: Huber with ``delta = lam``, threshold ``xi = lam``, first ``K`` rows shifted by ``u``."""
    shift = np.zeros(n)
    shift[:K] = u
    return SimConfig(n=n, p=p, shift=shift, estimator=Huber(lam), rule=Threshold(lam), alpha=alpha,
                     trials=trials, seed=seed)


def run_hl_compare(cfg: SimConfig, max_attempts: int = MAX_ATTEMPTS, workers: int | None = None) -> HlCompareResult:
    """Power of the path-based and the sign-conditioned tests on the same detected true outlier."""
    if not (isinstance(cfg.estimator, Huber) and isinstance(cfg.rule, Threshold)
            and cfg.estimator.delta == cfg.rule.xi):
        raise InputError("the comparison needs Huber with delta equal to the threshold xi")
    out, attempts, failures, mismatches = _run(_hl_attempt, cfg, max_attempts, workers)
    a = cfg.alpha
    return HlCompareResult(
        tpr_plh=float(_rate(o.selective_p < a for o in out)),
        tpr_hl=float(_rate(o.extra_p < a for o in out)),
        containment_failures=sum(not o.contained for o in out),
        detection_mismatches=mismatches,
        attempts=attempts,
        outcomes=tuple(out),
        failures=tuple(failures),
    )


def tpr_config(estimator: EstimatorSpec, rule: DetectionRule, u1: float = 5.0, n: int = 20, p: int = 5,
               trials: int = 500, seed: int = 0) -> SimConfig:
    shift = np.zeros(n)
    shift[0] = u1
    return SimConfig(n=n, p=p, shift=shift, estimator=estimator, rule=rule, trials=trials, seed=seed)


__all__ = [
    "SimConfig", "generate_trial", "run_fpr", "run_tpr", "run_hl_compare", "hl_config", "tpr_config",
    "FprResult", "TprResult", "HlCompareResult", "TrialOutcome", "default_beta", "worker_count",
]
