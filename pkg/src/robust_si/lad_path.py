"""LAD regression as a parametric-RHS linear program, and its exact solution path.

The LP is ``min q'r  s.t.  S r = u0 + u1 z,  r >= 0`` with the variable layout
``r = (rho_1^+, rho_1^-, ..., rho_n^+, rho_n^-, beta_1^+, beta_1^-, ..., beta_d^+, beta_d^-)``
and ``S = [I (x) (1, -1) | X (x) (1, -1)]``, ``q = (1, ..., 1, 0, ..., 0)``.

For a fixed optimal basis the basic solution ``B^{-1}(u0 + u1 z)`` is affine in
``z`` and the reduced costs do not depend on ``z``. Marching from the left end
of the window, the basis stays optimal until a basic variable reaches zero; a
dual simplex pivot on that row restores primal feasibility beyond it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import CycleDetected, NumericalFailure, Unbounded, WindowTooSmall
from .errors import RankDeficiencyWarning
from .model import DataLine, PiecewisePath

_RC_TOL = 1e-9
_PIVOT_TOL = 1e-9
_REFACTOR_EVERY = 25


def lad_program(X: np.ndarray, u0: np.ndarray, u1: np.ndarray | None = None):
    """Constraint matrix, cost and right-hand sides of the LAD linear program."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    S = np.zeros((n, 2 * n + 2 * d))
    rows = np.arange(n)
    S[rows, 2 * rows] = 1.0
    S[rows, 2 * rows + 1] = -1.0
    S[:, 2 * n::2] = X
    S[:, 2 * n + 1::2] = -X
    q = np.concatenate([np.ones(2 * n), np.zeros(2 * d)])
    u0 = np.asarray(u0, dtype=float)
    u1 = np.zeros(n) if u1 is None else np.asarray(u1, dtype=float)
    return S, q, u0, u1


@dataclass(frozen=True, eq=False)
class LadBasis:
    """An optimal basis of the LAD program: ``n`` basic column indices plus an LU of ``S[:, basic]``."""

    basic_indices: tuple[int, ...]
    basis_inverse_factor: tuple

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self.basis_inverse_factor, rhs)


class ParametricLP:
    """Dense tableau for ``min q'r s.t. S r = u0 + u1 z, r >= 0`` over a fixed basis.

    Holds ``T = B^{-1} S``, the basic solution ``x0 + x1 z`` and the reduced
    costs. Pivots update the tableau in place and refactor periodically.
    """

    def __init__(self, S, q, u0, u1, basic):
        self.S = np.asarray(S, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.u0 = np.asarray(u0, dtype=float)
        self.u1 = np.asarray(u1, dtype=float)
        self.m, self.N = self.S.shape
        self.scale = 1.0 + float(np.max(np.abs(self.S)))
        self._since_refactor = 0
        self.refactor(list(basic))

    def refactor(self, basic=None):
        if basic is not None:
            self.basic = list(basic)
        B = self.S[:, self.basic]
        try:
            lu = scipy.linalg.lu_factor(B, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise NumericalFailure(f"basis factorization failed: {exc}") from exc
        if np.min(np.abs(np.diag(lu[0]))) < 1e-13 * self.scale:
            raise NumericalFailure("basis matrix is numerically singular")
        rhs = np.column_stack([self.S, self.u0, self.u1])
        sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        self.T = sol[:, : self.N]
        self.x0 = sol[:, self.N]
        self.x1 = sol[:, self.N + 1]
        self.rc = self.q - self.q[self.basic] @ self.T
        self.lu = lu
        self._since_refactor = 0

    def values(self, z: float) -> np.ndarray:
        return self.x0 + self.x1 * z

    def primal(self, z: float) -> np.ndarray:
        r = np.zeros(self.N)
        r[self.basic] = self.values(z)
        return r

    def objective(self, z: float) -> float:
        return float(self.q[self.basic] @ self.values(z))

    def feas_tol(self, z: float) -> float:
        return 1e-9 * (1.0 + float(np.max(np.abs(self.u0 + self.u1 * z))))

    def pivot(self, row: int, col: int):
        T = self.T
        p = T[row, col]
        pivot_row = T[row] / p
        col_vals = T[:, col].copy()
        col_vals[row] = 0.0
        T -= np.outer(col_vals, pivot_row)
        T[row] = pivot_row
        x0r, x1r = self.x0[row] / p, self.x1[row] / p
        self.x0 -= col_vals * x0r
        self.x1 -= col_vals * x1r
        self.x0[row], self.x1[row] = x0r, x1r
        self.rc = self.rc - self.rc[col] * pivot_row
        self.basic[row] = col
        self._since_refactor += 1
        if self._since_refactor >= _REFACTOR_EVERY:
            self.refactor()

    def primal_simplex(self, z: float, max_pivots: int):
        """Phase-2 primal simplex at fixed ``z`` from a feasible basis.

        Dantzig's rule, switching to Bland's least-index rule after a
        degenerate pivot.
        """
        bland = False
        for _ in range(max_pivots):
            candidates = np.flatnonzero(self.rc < -_RC_TOL)
            if candidates.size == 0:
                return
            col = int(candidates[0]) if bland else int(candidates[np.argmin(self.rc[candidates])])
            column = self.T[:, col]
            rows = np.flatnonzero(column > _PIVOT_TOL)
            if rows.size == 0:
                raise Unbounded("LP objective is unbounded below")
            vals = np.maximum(self.values(z)[rows], 0.0)
            ratios = vals / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12]
            row = int(min(ties, key=lambda i: self.basic[i]))
            bland = bland or best <= 1e-12
            self.pivot(row, col)
        raise CycleDetected(f"primal simplex exceeded {max_pivots} pivots")

    def dual_pivot_on(self, row: int):
        """Dual simplex pivot making ``basic[row]`` leave; least ratio, least index on ties."""
        trow = self.T[row]
        cols = np.flatnonzero(trow < -_PIVOT_TOL)
        cols = cols[~np.isin(cols, self.basic)]
        if cols.size == 0:
            raise NumericalFailure("parametric LP became infeasible (no dual pivot column)")
        ratios = np.maximum(self.rc[cols], 0.0) / -trow[cols]
        best = ratios.min()
        col = int(cols[ratios <= best + 1e-12][0])
        self.pivot(row, col)

    def basis(self) -> LadBasis:
        return LadBasis(tuple(self.basic), self.lu)


def _initial_basis(n: int, rhs: np.ndarray) -> list[int]:
    # rho_i^+ when the right-hand side is nonnegative, rho_i^- otherwise: feasible by construction
    return [2 * i if rhs[i] >= 0 else 2 * i + 1 for i in range(n)]


def _beta_from(lp: ParametricLP, n: int, d: int, vec: np.ndarray) -> np.ndarray:
    beta = np.zeros(d)
    for row, col in enumerate(lp.basic):
        if col >= 2 * n:
            j, neg = divmod(col - 2 * n, 2)
            beta[j] += -vec[row] if neg else vec[row]
    return beta


def _check_rank(X: np.ndarray):
    if np.linalg.matrix_rank(X) < X.shape[1]:
        warnings.warn("X lacks full column rank; the LAD path is one of many optimal selections",
                      RankDeficiencyWarning, stacklevel=3)


def _lad_lp(X, u0, u1, z):
    n, d = X.shape
    S, q, u0, u1 = lad_program(X, u0, u1)
    lp = ParametricLP(S, q, u0, u1, _initial_basis(n, u0 + u1 * z))
    lp.primal_simplex(z, max_pivots=50 * (n + d) + 100)
    lp.refactor()
    return lp


def lad_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    return float(np.sum(np.abs(y - X @ beta)))


def solve_lad(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, LadBasis]:
    """Least-absolute-deviation fit by simplex on the LAD linear program.

    Returns the coefficients and the optimal basis. Optimality is checked
    through the duality gap of the final basis.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    _check_rank(X)
    lp = _lad_lp(X, y, None, 0.0)
    beta = _beta_from(lp, n, d, lp.x0)
    primal = lad_objective(X, y, beta)
    w = scipy.linalg.lu_solve(lp.lu, lp.q[lp.basic], trans=1)
    dual = float(w @ y)
    if np.max(lp.S.T @ w - lp.q) > 1e-8 or abs(primal - dual) > 1e-8 * (1.0 + primal):
        raise NumericalFailure(f"LAD optimality certificate failed (primal {primal}, dual {dual})")
    return beta, lp.basis()


def lad_path(X: np.ndarray, line: DataLine, window: tuple[float, float],
             max_breakpoints: int | None = None, window_mult: float = 20.0) -> PiecewisePath:
    """Exact LAD coefficient path ``beta(z)`` for ``y(z) = a + b z`` over ``window``."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    z_lo, z_hi = float(window[0]), float(window[1])
    if not (np.isfinite(z_lo) and np.isfinite(z_hi) and z_lo <= line.z_obs <= z_hi):
        raise WindowTooSmall(f"z_obs={line.z_obs} is not inside the finite window [{z_lo}, {z_hi}]")
    if max_breakpoints is None:
        max_breakpoints = int(10 * (n + d) * window_mult)
    _check_rank(X)

    lp = _lad_lp(X, line.a, line.b, z_lo)
    knots = [z_lo]
    intercepts, slopes = [], []
    z = z_lo
    pivots = 0
    seen_at_z: set[tuple[int, ...]] = set()
    while True:
        vals = lp.values(z)
        falling = np.flatnonzero(lp.x1 < -1e-12 * (1.0 + np.abs(lp.x0)))
        if falling.size:
            steps = np.maximum(vals[falling], 0.0) / -lp.x1[falling]
            step = float(steps.min())
        else:
            step = np.inf
        z_next = z + step
        if z_next >= z_hi:
            break
        if z_next > knots[-1]:
            intercepts.append(_beta_from(lp, n, d, lp.x0))
            slopes.append(_beta_from(lp, n, d, lp.x1))
            knots.append(z_next)
            seen_at_z.clear()
        ties = falling[steps <= step + 1e-12 * (1.0 + abs(z))]
        row = int(min(ties, key=lambda i: lp.basic[i]))
        lp.dual_pivot_on(row)
        z = z_next
        pivots += 1
        key = tuple(sorted(lp.basic))
        if key in seen_at_z:
            raise CycleDetected(f"basis repeated at z={z}")
        seen_at_z.add(key)
        if pivots > max_breakpoints:
            raise CycleDetected(f"LAD path exceeded {max_breakpoints} pivots")
    intercepts.append(_beta_from(lp, n, d, lp.x0))
    slopes.append(_beta_from(lp, n, d, lp.x1))
    knots.append(z_hi)
    return PiecewisePath.from_segments(knots, intercepts, slopes)


def lad_objective_path(X: np.ndarray, line: DataLine, path: PiecewisePath, z: float) -> float:
    from .model import evaluate_path

    return lad_objective(X, line(z), evaluate_path(path, z))
