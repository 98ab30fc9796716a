"""Data containers: datasets, the conditional line, rules and piecewise paths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DimensionMismatch, InputError, OutOfWindow

BREAKPOINT_MERGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        Sigma = np.asarray(self.Sigma, dtype=float)
        n, d = X.shape
        if n < 2 or d < 1:
            raise InputError(f"need n >= 2 and d >= 1, got X of shape {X.shape}")
        if y.shape != (n,):
            raise DimensionMismatch(f"y has length {y.size}, expected {n}")
        if Sigma.shape != (n, n):
            raise DimensionMismatch(f"Sigma has shape {Sigma.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise InputError("X and y must be finite")
        if np.max(np.abs(Sigma - Sigma.T)) > 1e-10:
            raise InputError("Sigma is not symmetric")
        if np.min(np.linalg.eigvalsh(Sigma)) < -1e-8:
            raise InputError("Sigma is not positive semidefinite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Sigma", Sigma)

    @classmethod
    def with_noise_variance(cls, X, y, sigma2: float) -> "Dataset":
        n = np.asarray(y).size
        return cls(X, y, sigma2 * np.eye(n))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class DataLine:
    """The response family ``y(z) = a + b z`` with ``y(z_obs)`` the observed response."""

    a: np.ndarray
    b: np.ndarray
    z_obs: float

    def __call__(self, z: float) -> np.ndarray:
        return self.a + self.b * z

    @property
    def n(self) -> int:
        return self.a.size


@dataclass(frozen=True, eq=False)
class PiecewisePath:
    """Continuous piecewise-affine vector function of a scalar on a finite window.

    ``intercepts[t] + slopes[t] * z`` is the value on segment ``t``, which
    spans ``[knots[t], knots[t + 1]]`` where ``knots`` is the window bounds
    with ``breakpoints`` in between.
    """

    breakpoints: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray
    window: tuple[float, float]

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).ravel()
        c = np.atleast_2d(np.asarray(self.intercepts, dtype=float))
        d = np.atleast_2d(np.asarray(self.slopes, dtype=float))
        lo, hi = float(self.window[0]), float(self.window[1])
        if not lo <= hi:
            raise ValueError(f"bad window {self.window}")
        if c.shape != d.shape or c.shape[0] != bp.size + 1:
            raise DimensionMismatch(
                f"{bp.size} breakpoints need {bp.size + 1} segments, got {c.shape} / {d.shape}"
            )
        if bp.size and (np.any(np.diff(bp) <= 0) or bp[0] <= lo or bp[-1] >= hi):
            raise ValueError("breakpoints must be strictly increasing and inside the window")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "intercepts", c)
        object.__setattr__(self, "slopes", d)
        object.__setattr__(self, "window", (lo, hi))

    @classmethod
    def from_segments(cls, knots, intercepts, slopes) -> "PiecewisePath":
        """Build a path from segment boundaries, merging boundaries closer than 1e-12.

        ``knots`` has one more entry than there are segments; the first and
        last entries are the window. Zero-length segments are dropped.
        """
        knots = [float(k) for k in knots]
        keep = [0]
        for t in range(1, len(knots) - 1):
            if knots[t] - knots[keep[-1]] > BREAKPOINT_MERGE_TOL and knots[-1] - knots[t] > BREAKPOINT_MERGE_TOL:
                keep.append(t)
        # segment t spans knots[t]..knots[t+1]; each merged run keeps its longest segment
        seg_idx = []
        for j, t in enumerate(keep):
            end = keep[j + 1] if j + 1 < len(keep) else len(knots) - 1
            run = range(t, end)
            seg_idx.append(max(run, key=lambda s: knots[s + 1] - knots[s]))
        c = np.asarray(intercepts, dtype=float)[seg_idx]
        d = np.asarray(slopes, dtype=float)[seg_idx]
        bps = [knots[t] for t in keep[1:]]
        return cls(np.asarray(bps), c, d, (knots[0], knots[-1]))

    @property
    def n_segments(self) -> int:
        return self.intercepts.shape[0]

    @property
    def knots(self) -> np.ndarray:
        return np.concatenate([[self.window[0]], self.breakpoints, [self.window[1]]])

    def segment_of(self, z: float) -> int:
        lo, hi = self.window
        if not lo <= z <= hi:
            raise OutOfWindow(f"z={z} outside window [{lo}, {hi}]")
        return int(np.searchsorted(self.breakpoints, z, side="left"))

    def segments(self):
        """Yield ``(t, z_start, z_end, intercept, slope)`` in order."""
        k = self.knots
        for t in range(self.n_segments):
            yield t, k[t], k[t + 1], self.intercepts[t], self.slopes[t]


@dataclass(frozen=True, eq=False)
class ResidualPath(PiecewisePath):
    """A :class:`PiecewisePath` whose values are the robust residuals ``r(z)``."""


@dataclass(frozen=True)
class Threshold:
    xi: float

    def __post_init__(self):
        if not self.xi > 0:
            raise InputError(f"threshold xi must be positive, got {self.xi}")


@dataclass(frozen=True)
class TopK:
    K: int

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise InputError(f"K must be a positive integer, got {self.K}")


DetectionRule = Union[Threshold, TopK]


@dataclass(frozen=True)
class LAD:
    pass


@dataclass(frozen=True)
class Huber:
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise InputError(f"Huber delta must be positive, got {self.delta}")


EstimatorSpec = Union[LAD, Huber]


def evaluate_path(path: PiecewisePath, z: float) -> np.ndarray:
    t = path.segment_of(z)
    return path.intercepts[t] + path.slopes[t] * z


def residual_path(line: DataLine, coeff_path: PiecewisePath, X: np.ndarray) -> ResidualPath:
    """Residual path ``f_t = a - X c_t``, ``g_t = b - X d_t`` on the same breakpoints."""
    X = np.asarray(X, dtype=float)
    if coeff_path.intercepts.shape[1] != X.shape[1] or X.shape[0] != line.n:
        raise DimensionMismatch(
            f"path dimension {coeff_path.intercepts.shape[1]} / line length {line.n} "
            f"do not match X of shape {X.shape}"
        )
    f = line.a[None, :] - coeff_path.intercepts @ X.T
    g = line.b[None, :] - coeff_path.slopes @ X.T
    return ResidualPath(coeff_path.breakpoints, f, g, coeff_path.window)


def default_window(z_obs: float, sigma_eta: float, mult: float = 20.0) -> tuple[float, float]:
    """Working window ``[min(z_obs, 0) - w s, max(z_obs, 0) + w s]``."""
    if not (math.isfinite(z_obs) and sigma_eta > 0):
        raise InputError("window needs finite z_obs and positive sigma_eta")
    return (min(z_obs, 0.0) - mult * sigma_eta, max(z_obs, 0.0) + mult * sigma_eta)
