"""Interval-set algebra, pseudo-inverse solves and tail-stable Gaussian masses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import erf, erfc, log_ndtr, logsumexp

from .errors import DimensionMismatch, ZeroMassRegion

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class IntervalSet:
    """A finite union of disjoint closed intervals on the extended real line.

    Instances are always canonical: sorted, pairwise disjoint, with touching
    intervals merged. Build them with :meth:`from_intervals` unless the input
    is already canonical.
    """

    intervals: tuple[tuple[float, float], ...] = ()

    @classmethod
    def from_intervals(cls, pieces: Iterable[Sequence[float]]) -> "IntervalSet":
        kept = sorted((float(lo), float(hi)) for lo, hi in pieces if lo <= hi)
        merged: list[list[float]] = []
        for lo, hi in kept:
            if merged and lo <= merged[-1][1]:
                if hi > merged[-1][1]:
                    merged[-1][1] = hi
            else:
                merged.append([lo, hi])
        return cls(tuple((lo, hi) for lo, hi in merged))

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(())

    @classmethod
    def real_line(cls) -> "IntervalSet":
        return cls(((-math.inf, math.inf),))

    @classmethod
    def interval(cls, lo: float, hi: float) -> "IntervalSet":
        return cls.from_intervals([(lo, hi)])

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def __bool__(self) -> bool:
        return bool(self.intervals)

    def __or__(self, other: "IntervalSet") -> "IntervalSet":
        return interval_union(self, other)

    def __and__(self, other: "IntervalSet") -> "IntervalSet":
        return interval_intersect(self, other)

    @property
    def inf(self) -> float:
        return self.intervals[0][0] if self.intervals else math.inf

    @property
    def sup(self) -> float:
        return self.intervals[-1][1] if self.intervals else -math.inf

    def contains(self, x: float, tol: float = 0.0) -> bool:
        for lo, hi in self.intervals:
            if lo - tol <= x <= hi + tol:
                return True
            if lo - tol > x:
                break
        return False

    def contains_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        out = np.zeros(xs.shape, dtype=bool)
        for lo, hi in self.intervals:
            out |= (xs >= lo) & (xs <= hi)
        return out

    def distance_to_boundary(self, xs: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest finite endpoint."""
        xs = np.asarray(xs, dtype=float)
        ends = [e for iv in self.intervals for e in iv if math.isfinite(e)]
        if not ends:
            return np.full(xs.shape, math.inf)
        ends_arr = np.asarray(ends)
        return np.min(np.abs(xs[..., None] - ends_arr), axis=-1)

    def measure(self) -> float:
        return float(sum(hi - lo for lo, hi in self.intervals))

    def to_list(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in self.intervals]


def interval_union(A: IntervalSet, B: IntervalSet) -> IntervalSet:
    return IntervalSet.from_intervals(list(A.intervals) + list(B.intervals))


def interval_intersect(A: IntervalSet, B: IntervalSet) -> IntervalSet:
    out = []
    i = j = 0
    a, b = A.intervals, B.intervals
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo <= hi:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return IntervalSet.from_intervals(out)


def interval_complement_within(A: IntervalSet, lo: float, hi: float) -> IntervalSet:
    """Closure of ``[lo, hi]`` minus ``A``.

    Endpoints shared with ``A`` are kept (closed convention); they carry no
    Gaussian mass.
    """
    if lo > hi:
        raise ValueError(f"empty window [{lo}, {hi}]")
    out = []
    cursor = lo
    for a_lo, a_hi in A.intervals:
        if a_hi < cursor:
            continue
        if a_lo > hi:
            break
        if a_lo > cursor:
            out.append((cursor, a_lo))
        cursor = max(cursor, a_hi)
        if cursor >= hi:
            break
    if cursor < hi:
        out.append((cursor, hi))
    elif not A.contains(hi):
        out.append((hi, hi))
    return IntervalSet.from_intervals(out)


@dataclass(frozen=True)
class GaussianParams:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


def normal_cdf(x: float) -> float:
    """Standard normal CDF through ``erfc`` so the lower tail keeps full relative precision."""
    return 0.5 * float(erfc(-x / _SQRT2))


def normal_sf(x: float) -> float:
    """Upper-tail probability Q(x) = 1 - Phi(x)."""
    return 0.5 * float(erfc(x / _SQRT2))


def _log_tail_mass(lo: float, hi: float) -> float:
    # 0 <= lo <= hi: log(Q(lo) - Q(hi)) without forming the difference directly.
    log_q_lo = float(log_ndtr(-lo))
    log_q_hi = float(log_ndtr(-hi)) if hi < math.inf else -math.inf
    if log_q_hi == -math.inf:
        return log_q_lo
    delta = log_q_hi - log_q_lo
    if delta >= 0.0:
        return -math.inf
    return log_q_lo + math.log(-math.expm1(delta))


def log_standard_mass(lo: float, hi: float) -> float:
    """Log of the standard normal probability of ``[lo, hi]``."""
    if not lo < hi:
        return -math.inf
    if lo >= 0.0:
        return _log_tail_mass(lo, hi)
    if hi <= 0.0:
        return _log_tail_mass(-hi, -lo)
    # straddles the mean: erf values have opposite signs, no cancellation
    upper = float(erf(hi / _SQRT2)) if hi < math.inf else 1.0
    lower = float(erf(lo / _SQRT2)) if lo > -math.inf else -1.0
    return math.log(0.5 * (upper - lower))


def _log_masses(params: GaussianParams, pieces: Iterable[tuple[float, float]]) -> list[float]:
    m, s = params.mean, params.sd
    return [log_standard_mass((lo - m) / s, (hi - m) / s) for lo, hi in pieces]


def _split_at(Z: IntervalSet, x: float) -> tuple[list, list]:
    below, above = [], []
    for lo, hi in Z.intervals:
        if hi <= x:
            below.append((lo, hi))
        elif lo >= x:
            above.append((lo, hi))
        else:
            below.append((lo, x))
            above.append((x, hi))
    return below, above


MASS_FLOOR = 1e-300
_LOG_MASS_FLOOR = math.log(MASS_FLOOR)


def _log_total(params: GaussianParams, Z: IntervalSet, floor: float = -math.inf) -> float:
    total = logsumexp(_log_masses(params, Z.intervals)) if Z else -math.inf
    if not np.isfinite(total) or total < floor:
        raise ZeroMassRegion(f"truncation region {Z.to_list()} carries no usable Gaussian mass")
    return float(total)


def truncated_normal_cdf(params: GaussianParams, Z: IntervalSet, x: float) -> float:
    """CDF of N(mean, variance) truncated to ``Z``, evaluated at ``x``.

    Piece masses are combined in log space, so regions far in the tails do not
    underflow. A total mass below ``MASS_FLOOR`` raises ``ZeroMassRegion``;
    the log-space variants have no such floor.
    """
    log_total = _log_total(params, Z, _LOG_MASS_FLOOR)
    below, _ = _split_at(Z, x)
    if not below:
        return 0.0
    log_below = logsumexp(_log_masses(params, below))
    return float(min(1.0, math.exp(log_below - log_total)))


def truncated_normal_sf(params: GaussianParams, Z: IntervalSet, x: float) -> float:
    """Survival function ``1 - F(x)`` computed from the upper pieces directly."""
    log_total = _log_total(params, Z, _LOG_MASS_FLOOR)
    _, above = _split_at(Z, x)
    if not above:
        return 0.0
    log_above = logsumexp(_log_masses(params, above))
    return float(min(1.0, math.exp(log_above - log_total)))


def least_squares_apply(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution ``M^+ v``.

    Uses LAPACK's complete orthogonal factorization (column-pivoted QR), which
    is rank revealing, so rank-deficient ``M`` is fine. ``v`` may be a matrix.
    """
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    if M.ndim != 2 or v.shape[0] != M.shape[0]:
        raise DimensionMismatch(f"cannot solve {M.shape} system against {v.shape}")
    n, d = M.shape
    if n == 0 or d == 0:
        return np.zeros((d,) + v.shape[1:])
    cond = np.finfo(float).eps * max(n, d) * 10
    sol, *_ = scipy.linalg.lstsq(M, v, cond=cond, lapack_driver="gelsy")
    return sol


def truncated_normal_logcdf(params: GaussianParams, Z: IntervalSet, x: float) -> float:
    log_total = _log_total(params, Z)
    below, _ = _split_at(Z, x)
    if not below:
        return -math.inf
    return float(min(0.0, logsumexp(_log_masses(params, below)) - log_total))


def truncated_normal_logsf(params: GaussianParams, Z: IntervalSet, x: float) -> float:
    log_total = _log_total(params, Z)
    _, above = _split_at(Z, x)
    if not above:
        return -math.inf
    return float(min(0.0, logsumexp(_log_masses(params, above)) - log_total))
