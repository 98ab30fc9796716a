"""Outlier detection at a point and the exact detection-event region along a residual path.

On each segment of a residual path the residuals are affine, ``r_i(z) = f_i + g_i z``,
so the set of ``z`` reproducing a detection decision is a finite union of
intervals. Threshold rules compare each ``|r_i|`` with ``xi``; top-K rules compare
pairs ``|r_i| >= |r_j|`` for detected ``i`` and undetected ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CallbackInconsistent, EmptyRegion, InputError, TieAtBoundary
from .model import DetectionRule, ResidualPath, Threshold, TopK
from .numerics import IntervalSet, interval_complement_within

TIE_TOL = 1e-12
CONTAIN_TOL = 1e-7
MERGE_GAP = 1e-12


@dataclass(frozen=True)
class OutlierSet:
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise InputError("duplicate outlier indices")
        if idx and idx[0] < 0:
            raise InputError("negative outlier index")
        object.__setattr__(self, "indices", idx)

    def __contains__(self, i) -> bool:
        return int(i) in self.indices

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def check_bounds(self, n: int):
        if self.indices and self.indices[-1] >= n:
            raise InputError(f"outlier index {self.indices[-1]} out of range for n={n}")

    def complement(self, n: int) -> list[int]:
        inside = set(self.indices)
        return [i for i in range(n) if i not in inside]


def detect(residuals: np.ndarray, rule: DetectionRule) -> OutlierSet:
    """Indices flagged by ``rule``: ``|r_i| >= xi``, or the ``K`` largest ``|r_i|``."""
    mag = np.abs(np.asarray(residuals, dtype=float))
    if isinstance(rule, Threshold):
        return OutlierSet(tuple(np.flatnonzero(mag >= rule.xi)))
    if isinstance(rule, TopK):
        n = mag.size
        if rule.K > n:
            raise InputError(f"K={rule.K} exceeds n={n}")
        order = np.argsort(-mag, kind="stable")
        if rule.K < n and mag[order[rule.K - 1]] - mag[order[rule.K]] <= TIE_TOL:
            raise TieAtBoundary(f"|r| tie at rank {rule.K}: {mag[order[rule.K - 1]]}")
        return OutlierSet(tuple(order[: rule.K]))
    raise TypeError(f"unknown detection rule {rule!r}")


def _half_line(c0: float, c1: float, lo: float, hi: float) -> IntervalSet:
    """``{z in [lo, hi] : c0 + c1 z >= 0}``."""
    if c1 > 0:
        return IntervalSet.interval(max(lo, -c0 / c1), hi)
    if c1 < 0:
        return IntervalSet.interval(lo, min(hi, -c0 / c1))
    return IntervalSet.interval(lo, hi) if c0 >= 0 else IntervalSet.empty()


def threshold_region(segment, i: int, xi: float) -> IntervalSet:
    """Points of the segment where ``|f_i + g_i z| >= xi``."""
    f, g, lo, hi = segment
    fi, gi = float(f[i]), float(g[i])
    if gi == 0.0:
        return IntervalSet.interval(lo, hi) if abs(fi) >= xi else IntervalSet.empty()
    a, b = (-xi - fi) / gi, (xi - fi) / gi
    left, right = min(a, b), max(a, b)
    return IntervalSet.from_intervals([(lo, min(hi, left)), (max(lo, right), hi)])


def topk_region(segment, i: int, i_prime: int) -> IntervalSet:
    """Points of the segment where ``|r_i(z)| >= |r_i'(z)|``.

    The quadratic ``r_i^2 - r_i'^2`` factors as ``(r_i - r_i')(r_i + r_i')``, so the
    region is where both affine factors share a sign. Working with the factors
    avoids the cancellation of the quadratic formula and makes the
    negative-discriminant case impossible.
    """
    f, g, lo, hi = segment
    fi, gi, fj, gj = float(f[i]), float(g[i]), float(f[i_prime]), float(g[i_prime])
    d0, d1 = fi - fj, gi - gj
    s0, s1 = fi + fj, gi + gj
    both_pos = _half_line(d0, d1, lo, hi) & _half_line(s0, s1, lo, hi)
    both_neg = _half_line(-d0, -d1, lo, hi) & _half_line(-s0, -s1, lo, hi)
    return both_pos | both_neg


def _segments(res_path: ResidualPath):
    for _, lo, hi, f, g in res_path.segments():
        yield (f, g, float(lo), float(hi))


def _check_observed(res_path: ResidualPath, rule: DetectionRule, observed: OutlierSet):
    n = res_path.intercepts.shape[1]
    if len(observed) == 0:
        raise InputError("observed outlier set is empty")
    observed.check_bounds(n)
    if isinstance(rule, TopK) and len(observed) != rule.K:
        raise InputError(f"top-{rule.K} rule with {len(observed)} observed outliers")
    return n


def _tidy(region: IntervalSet, z_obs: float | None) -> IntervalSet:
    """Close rounding-level gaps between pieces and drop massless points away from ``z_obs``."""
    out: list[list[float]] = []
    for lo, hi in region:
        if out and lo - out[-1][1] <= MERGE_GAP * (1.0 + abs(lo)):
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    keep = [(lo, hi) for lo, hi in out if hi > lo or (z_obs is not None and lo == z_obs)]
    return IntervalSet.from_intervals(keep or out)


def _finish(region: IntervalSet, z_obs: float | None) -> IntervalSet:
    region = _tidy(region, z_obs)
    if not region:
        raise EmptyRegion("detection event region is empty")
    if z_obs is not None and not region.contains(z_obs, tol=CONTAIN_TOL * (1.0 + abs(z_obs))):
        raise EmptyRegion(f"z_obs={z_obs} is not in the event region {region.to_list()}")
    return region


def event_region_over_path(res_path: ResidualPath, rule: DetectionRule, observed: OutlierSet,
                           z_obs: float | None = None) -> IntervalSet:
    """Set of ``z`` in the path window at which ``rule`` detects exactly ``observed``.

    If ``z_obs`` is given, the result is checked to contain it.
    """
    n = _check_observed(res_path, rule, observed)
    others = observed.complement(n)
    pieces = []
    for seg in _segments(res_path):
        lo, hi = seg[2], seg[3]
        region = IntervalSet.interval(lo, hi)
        if isinstance(rule, Threshold):
            for i in observed:
                region = region & threshold_region(seg, i, rule.xi)
                if not region:
                    break
            for j in others:
                if not region:
                    break
                region = region & interval_complement_within(threshold_region(seg, j, rule.xi), lo, hi)
        elif isinstance(rule, TopK):
            for i in observed:
                for j in others:
                    region = region & topk_region(seg, i, j)
                    if not region:
                        break
                if not region:
                    break
        else:
            raise TypeError(f"unknown detection rule {rule!r}")
        pieces.extend(region.intervals)
    return _finish(IntervalSet.from_intervals(pieces), z_obs)


RootCallback = Callable[[int, int, np.ndarray, np.ndarray, float, float], tuple[Sequence[float], int]]


def _sign_region(roots: Sequence[float], mid_sign: int, lo: float, hi: float, want_positive: bool) -> IntervalSet:
    """Closed pieces of ``[lo, hi]`` on which the sign pattern equals the wanted sign.

    The sign is ``mid_sign`` on the piece starting at or straddling the midpoint
    and flips at each root.
    """
    roots = [float(r) for r in roots]
    if mid_sign not in (-1, 1):
        raise CallbackInconsistent(f"midpoint sign must be +1 or -1, got {mid_sign}")
    if any(r < lo or r > hi for r in roots) or any(b < a for a, b in zip(roots, roots[1:])):
        raise CallbackInconsistent(f"roots {roots} are not sorted inside [{lo}, {hi}]")
    mid = 0.5 * (lo + hi)
    knots = [lo] + roots + [hi]
    k_mid = sum(r <= mid for r in roots)
    out = []
    for k in range(len(knots) - 1):
        sign = mid_sign * (-1) ** abs(k - k_mid)
        if (sign > 0) == want_positive:
            out.append((knots[k], knots[k + 1]))
    return IntervalSet.from_intervals(out)


def detection_function_region(res_path: ResidualPath, phi_roots: RootCallback, observed: OutlierSet,
                              z_obs: float | None = None) -> IntervalSet:
    """Event region for a rule given through detection functions ``phi_i``.

    Instance ``i`` is flagged where ``phi_i(r(z)) >= 0``. ``phi_roots(t, i, f, g, lo, hi)``
    returns the sorted sign-changing roots of ``phi_i`` on segment ``t`` and its sign
    at the segment midpoint.
    """
    n = res_path.intercepts.shape[1]
    if len(observed) == 0:
        raise InputError("observed outlier set is empty")
    observed.check_bounds(n)
    pieces = []
    for t, lo, hi, f, g in res_path.segments():
        lo, hi = float(lo), float(hi)
        region = IntervalSet.interval(lo, hi)
        for i in range(n):
            roots, sign = phi_roots(t, i, f, g, lo, hi)
            region = region & _sign_region(roots, sign, lo, hi, want_positive=i in observed)
            if not region:
                break
        pieces.extend(region.intervals)
    return _finish(IntervalSet.from_intervals(pieces), z_obs)


def _probe_point(roots: Sequence[float], lo: float, hi: float) -> float:
    # midpoint, or the middle of the piece just right of it when a root sits there
    mid = 0.5 * (lo + hi)
    if mid not in roots:
        return mid
    right = [r for r in roots if r > mid]
    return 0.5 * (mid + (right[0] if right else hi))


def threshold_callback(xi: float) -> RootCallback:
    """Roots and midpoint sign of ``phi_i = |r_i| - xi``."""

    def phi(t, i, f, g, lo, hi):
        fi, gi = float(f[i]), float(g[i])
        roots = []
        if gi != 0.0:
            roots = sorted(r for r in ((xi - fi) / gi, (-xi - fi) / gi) if lo < r < hi)
        z = _probe_point(roots, lo, hi)
        return roots, 1 if abs(fi + gi * z) >= xi else -1

    return phi


def topk_callback(K: int) -> RootCallback:
    """Roots and midpoint sign of ``phi_i = |r_i| - (K-th largest |r_j|, j != i)``.

    ``phi_i`` can only vanish where ``|r_i| = |r_j|`` for some ``j``; of those
    candidates the ones where the sign actually flips are reported.
    """

    def phi_at(f, g, i, z):
        mag = np.abs(f + g * z)
        others = np.delete(mag, i)
        kth = np.partition(others, others.size - K)[others.size - K]
        return mag[i] - kth

    def phi(t, i, f, g, lo, hi):
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        cand = set()
        for j in range(f.size):
            if j == i:
                continue
            for c0, c1 in ((f[i] - f[j], g[i] - g[j]), (f[i] + f[j], g[i] + g[j])):
                if c1 != 0.0:
                    r = -c0 / c1
                    if lo < r < hi:
                        cand.add(float(r))
        knots = [lo] + sorted(cand) + [hi]
        signs = [1 if phi_at(f, g, i, 0.5 * (a + b)) >= 0 else -1 for a, b in zip(knots, knots[1:])]
        roots = [knots[k + 1] for k in range(len(signs) - 1) if signs[k] != signs[k + 1]]
        z = _probe_point(roots, lo, hi)
        return roots, 1 if phi_at(f, g, i, z) >= 0 else -1

    return phi


def rule_callback(rule: DetectionRule) -> RootCallback:
    if isinstance(rule, Threshold):
        return threshold_callback(rule.xi)
    if isinstance(rule, TopK):
        return topk_callback(rule.K)
    raise TypeError(f"unknown detection rule {rule!r}")
