"""Sign-conditioned inference through the Lasso form of Huber regression.

Profiling out ``beta`` from ``1/2 |y - X beta - u|^2 + lambda |u|_1`` leaves a
Lasso in the mean-shift vector ``u`` with design ``P = I - X X^+`` and response
``P y``. Fixing both the active set and the signs of ``u`` makes the event a
single polyhedron, so along the conditional line it is one interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyRegion, InputError, MaxIterations, NonUniqueActiveBlock
from .inference import TestDirection, selective_p
from .model import DataLine
from .numerics import IntervalSet, least_squares_apply

@dataclass(frozen=True, eq=False)
class LassoSolution:
    """Lasso fit with its support and signs; ``proj`` is the design it was fitted with."""

    u_hat: np.ndarray
    active: tuple[int, ...]
    signs: np.ndarray
    lam: float
    proj: np.ndarray
    y_tilde: np.ndarray

    def kkt_violation(self) -> float:
        """Largest violation of the subgradient conditions."""
        corr = self.proj.T @ (self.y_tilde - self.proj @ self.u_hat)
        viol = max(0.0, float(np.max(np.abs(corr))) - self.lam)
        if self.active:
            A = list(self.active)
            viol = max(viol, float(np.max(np.abs(corr[A] - self.lam * self.signs))))
        return viol


def project_out_design(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Residual-maker ``P = I - X X^+`` and ``P y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    proj = np.eye(n) - X @ least_squares_apply(X, np.eye(n))
    proj = 0.5 * (proj + proj.T)
    return proj @ y, proj


def _dual_gap(y_tilde, proj, u, lam):
    r = y_tilde - proj @ u
    corr = np.max(np.abs(proj.T @ r)) if r.size else 0.0
    theta = r * (min(1.0, lam / corr) if corr > 0 else 1.0)
    primal = 0.5 * float(r @ r) + lam * float(np.sum(np.abs(u)))
    dual = 0.5 * float(y_tilde @ y_tilde) - 0.5 * float((y_tilde - theta) @ (y_tilde - theta))
    return primal - dual, primal


def lasso_solve(y_tilde: np.ndarray, proj: np.ndarray, lam: float, max_sweeps: int = 100000,
                u0: np.ndarray | None = None) -> LassoSolution:
    """Cyclic coordinate descent for ``1/2 |y_tilde - proj u|^2 + lam |u|_1``.

    Stops when the duality gap falls to ``1e-9 (1 + objective)``.
    """
    if not lam > 0:
        raise InputError(f"lambda must be positive, got {lam}")
    y_tilde = np.asarray(y_tilde, dtype=float)
    proj = np.asarray(proj, dtype=float)
    n = proj.shape[1]
    col_sq = np.einsum("ij,ij->j", proj, proj)
    u = np.zeros(n) if u0 is None else np.array(u0, dtype=float)
    r = y_tilde - proj @ u
    for sweep in range(max_sweeps):
        for j in range(n):
            if col_sq[j] <= 1e-14:
                if u[j] != 0.0:
                    r += proj[:, j] * u[j]
                    u[j] = 0.0
                continue
            rho = proj[:, j] @ r + col_sq[j] * u[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            if new != u[j]:
                r += proj[:, j] * (u[j] - new)
                u[j] = new
        if sweep % 5 == 4 or sweep == 0:
            gap, obj = _dual_gap(y_tilde, proj, u, lam)
            if gap <= 1e-9 * (1.0 + obj):
                break
    else:
        raise MaxIterations(f"coordinate descent did not reach the gap tolerance in {max_sweeps} sweeps")
    active = tuple(int(j) for j in np.flatnonzero(u != 0.0))
    return LassoSolution(u, active, np.sign(u[list(active)]), float(lam), proj, y_tilde)


def hl_truncation_interval(sol: LassoSolution, line: DataLine, direction: TestDirection | None = None,
                           tol: float = 1e-7) -> IntervalSet:
    """Values of ``z`` on ``y(z) = a + b z`` keeping the Lasso support and signs of ``sol``.

    On a fixed support the active block solves ``P_AA u_A = (P y)_A - lam s``;
    the event is ``s * u_A(z) >= 0`` together with ``|(P y - P u)_j| <= lam`` off
    the support. Every constraint is affine in ``z``, so the result is one
    interval.
    """
    P = sol.proj
    A = list(sol.active)
    if not A:
        raise InputError("Lasso support is empty")
    if direction is not None and direction.target_index not in sol.active:
        raise InputError(f"instance {direction.target_index} is not in the Lasso support")
    Ac = [j for j in range(P.shape[0]) if j not in set(A)]
    ta, tb = P @ line.a, P @ line.b
    P_AA = P[np.ix_(A, A)]
    if np.linalg.matrix_rank(P_AA) < len(A):
        raise NonUniqueActiveBlock("active block of the projected design is singular")
    c0 = np.linalg.solve(P_AA, ta[A] - sol.lam * sol.signs)
    c1 = np.linalg.solve(P_AA, tb[A])
    # collect constraints k0 + k1 z >= 0
    k0 = [sol.signs * c0]
    k1 = [sol.signs * c1]
    if Ac:
        w0 = ta[Ac] - P[np.ix_(Ac, A)] @ c0
        w1 = tb[Ac] - P[np.ix_(Ac, A)] @ c1
        k0 += [sol.lam - w0, sol.lam + w0]
        k1 += [-w1, w1]
    k0, k1 = np.concatenate(k0), np.concatenate(k1)
    lo, hi = -np.inf, np.inf
    # slopes at rounding level are constant constraints
    small = np.abs(k1) <= 1e-12 * (1.0 + np.max(np.abs(k1)))
    pos, neg, flat = (k1 > 0) & ~small, (k1 < 0) & ~small, small
    if pos.any():
        lo = float(np.max(-k0[pos] / k1[pos]))
    if neg.any():
        hi = float(np.min(-k0[neg] / k1[neg]))
    if flat.any() and np.min(k0[flat]) < -tol:
        raise EmptyRegion("sign-conditioned event is empty")
    z = line.z_obs
    slack = tol * (1.0 + abs(z))
    if not lo - slack <= z <= hi + slack:
        raise EmptyRegion(f"z_obs={z} lies outside the sign-conditioned interval [{lo}, {hi}]")
    return IntervalSet.interval(min(lo, z), max(hi, z))


def hl_p_value(direction: TestDirection, interval: IntervalSet, z_obs: float) -> float:
    """Selective p-value of the sign-conditioned event; same pivot as the path-based one."""
    return selective_p(direction, interval, z_obs)
