"""Huber regression as a parametric QP and its active-set homotopy in ``z``.

Variables are ``r = (beta, u, v)`` with ``u`` the clipped and ``v`` the excess
absolute residual. The QP is

    min 1/2 r'P r + q'r   s.t.   S r <= u0 + u1 z

with ``P = diag(0, I, 0)``, ``q = (0, 0, delta 1)`` and five row blocks of
``S`` (each ``n`` rows)::

    [ X  -I  -I]  <=  y(z)        (-(u + v) <= y - X beta)
    [-X  -I  -I]  <= -y(z)        (y - X beta <= u + v)
    [ 0  -I   0]  <=  0
    [ 0   I   0]  <=  delta
    [ 0   0  -I]  <=  0

so ``u0 = (a, -a, 0, delta 1, 0)`` and ``u1 = (b, -b, 0, 0, 0)``.

For a fixed active set the KKT system is linear in ``z``, so the primal and
the active multipliers move along ``(psi, gamma)``. The next breakpoint is the
first ``z`` at which an inactive constraint becomes tight or an active
multiplier reaches zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg
from scipy.special import huber as _huber_loss

from .errors import CycleDetected, NumericalFailure, WindowTooSmall
from .model import DataLine, PiecewisePath

FRESH_OFFSET = 1e-9
TIE_TOL = 1e-10
_DUAL_REG = 1e-10


def huber_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray, delta: float) -> float:
    return float(np.sum(_huber_loss(delta, y - X @ beta)))


def huber_beta(X: np.ndarray, y: np.ndarray, delta: float, beta0: np.ndarray | None = None,
               max_iter: int = 500) -> np.ndarray:
    """Huber coefficients by damped Newton iterations on the residual partition.

    The undamped step jumps to the solution of the normal equations of the
    current quadratic-zone rows, with linear-zone rows entering through their
    clipped score. When those rows do not span the column space a
    Levenberg-type ridge is added, and a backtracking search only accepts
    descent. Termination is certified by a vanishing gradient.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    d = X.shape[1]
    if beta0 is None:
        beta = scipy.linalg.lstsq(X, y, lapack_driver="gelsy")[0]
    else:
        beta = np.array(beta0, dtype=float)
    obj = huber_objective(X, y, beta, delta)
    gtol = 1e-10 * (1.0 + float(np.max(np.abs(y)))) * (1.0 + float(np.max(np.abs(X)))) * X.shape[0]
    mu = 0.0
    for _ in range(max_iter):
        r = y - X @ beta
        grad = X.T @ np.clip(r, -delta, delta)
        if np.max(np.abs(grad)) <= gtol:
            return _polish(X, y, delta, beta)
        Xq = X[np.abs(r) <= delta]
        H = Xq.T @ Xq
        ridge = mu
        if ridge == 0.0 and np.linalg.matrix_rank(H) < d:
            ridge = 1e-6 * (1.0 + np.trace(H) / d)
        step = np.linalg.solve(H + ridge * np.eye(d), grad)
        t, accepted = 1.0, False
        for _ in range(60):
            cand = beta + t * step
            new_obj = huber_objective(X, y, cand, delta)
            # on a flat stretch a full step can land on the far edge with the same
            # objective and bounce back; equal objective only counts if the gradient shrinks
            if new_obj < obj or (new_obj <= obj and np.max(np.abs(X.T @ np.clip(y - X @ cand, -delta, delta)))
                                 < np.max(np.abs(grad))):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if ridge > 1e12:
                break
            mu = max(10.0 * ridge, 1e-6 * (1.0 + np.trace(H) / d))
            continue
        beta, obj = cand, new_obj
        # damping follows the accepted step length, so the next step starts near it
        floor = 1e-6 * (1.0 + np.trace(H) / d)
        mu = ridge / t if t < 1.0 else 0.1 * ridge
        if mu < floor:
            mu = 0.0
    r = y - X @ beta
    if np.max(np.abs(X.T @ np.clip(r, -delta, delta))) <= 1e3 * gtol:
        return _polish(X, y, delta, beta)
    raise NumericalFailure("Huber Newton iteration did not converge")


def _pin_flat(X, y, delta, beta):
    """Move a non-unique minimizer to a vertex of the optimal set.

    When the quadratic-zone rows do not span the column space the objective is
    flat along their null space; sliding along it until a linear-zone row
    reaches the boundary keeps optimality and pins the coefficients.
    """
    d = X.shape[1]
    for _ in range(d):
        e = y - X @ beta
        Q = np.abs(e) <= delta + 1e-11 * (1.0 + np.abs(y))
        rank = np.linalg.matrix_rank(X[Q]) if Q.any() else 0
        if rank == d:
            break
        v = np.linalg.svd(X[Q], full_matrices=True)[2][rank] if Q.any() else np.eye(d)[0]
        L = np.flatnonzero(~Q)
        xv = X[L] @ v
        ok = np.abs(xv) > 1e-12
        if not ok.any():
            break
        s = (e[L][ok] - np.sign(e[L][ok]) * delta) / xv[ok]
        pos, neg = s[s > 0], s[s < 0]
        step = pos.min() if pos.size else (neg.max() if neg.size else 0.0)
        beta = beta + step * v
    return beta


def _polish(X, y, delta, beta, rounds: int = 10):
    # exact solve of the stationarity equations on the current partition, repeated until stable
    def gnorm(bb):
        return float(np.max(np.abs(X.T @ np.clip(y - X @ bb, -delta, delta))))

    best = gnorm(beta)
    for _ in range(rounds):
        r = y - X @ beta
        quad = np.abs(r) <= delta
        Xq = X[quad]
        if Xq.shape[0] < X.shape[1] or np.linalg.matrix_rank(Xq) < X.shape[1]:
            return _pin_flat(X, y, delta, beta)
        sgn = np.sign(r[~quad])
        rhs = Xq.T @ y[quad] + delta * (X[~quad].T @ sgn)
        cand = np.linalg.solve(Xq.T @ Xq, rhs)
        g = gnorm(cand)
        if g > best:
            return beta
        beta, best = cand, g
        if np.array_equal(np.abs(y - X @ beta) <= delta, quad):
            return beta
    return beta


class HuberQP:
    """The matrices of the parametric Huber QP for one design, line and ``delta``."""

    def __init__(self, X: np.ndarray, a: np.ndarray, b: np.ndarray, delta: float):
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        self.X, self.n, self.d, self.delta = X, n, d, float(delta)
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        nv = d + 2 * n
        I, Z = np.eye(n), np.zeros((n, n))
        Zx = np.zeros((n, d))
        self.S = np.block([
            [X, -I, -I],
            [-X, -I, -I],
            [Zx, -I, Z],
            [Zx, I, Z],
            [Zx, Z, -I],
        ])
        self.P = np.zeros((nv, nv))
        self.P[d:d + n, d:d + n] = I
        self.q = np.concatenate([np.zeros(d + n), self.delta * np.ones(n)])
        zeros = np.zeros(n)
        self.u0 = np.concatenate([self.a, -self.a, zeros, self.delta * np.ones(n), zeros])
        self.u1 = np.concatenate([self.b, -self.b, zeros, zeros, zeros])
        self.nv = nv
        self.m = 5 * n

    def h(self, z: float) -> np.ndarray:
        return self.u0 + self.u1 * z

    def y(self, z: float) -> np.ndarray:
        return self.a + self.b * z

    def canonical_state(self, beta: np.ndarray, z: float):
        """Primal ``(beta, u, v)`` and the full multiplier vector implied by an optimal ``beta``."""
        e = self.y(z) - self.X @ beta
        absd = np.abs(e)
        delta = self.delta
        u = np.minimum(absd, delta)
        v = np.maximum(absd - delta, 0.0)
        clipped = np.minimum(absd, delta)
        lam1 = np.where(e < 0, clipped, 0.0)
        lam2 = np.where(e > 0, clipped, 0.0)
        mu5 = delta - lam1 - lam2
        zeros = np.zeros(self.n)
        mult = np.concatenate([lam1, lam2, zeros, zeros, mu5])
        return np.concatenate([beta, u, v]), mult

    def solve_active(self, active: tuple[int, ...]):
        """Affine KKT solution for a fixed active set.

        Returns ``(r0, lam0, psi, gamma)`` with ``r(z) = r0 + psi z`` and
        ``u_A(z) = lam0 + gamma z``.
        """
        A = np.asarray(active, dtype=int)
        SA = self.S[A]
        k = A.size
        K = np.block([[self.P, SA.T], [SA, np.zeros((k, k))]])
        rhs = np.column_stack([
            np.concatenate([-self.q, self.u0[A]]),
            np.concatenate([np.zeros(self.nv), self.u1[A]]),
        ])
        sol = None
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu = scipy.linalg.lu_factor(K, check_finite=False)
            if np.min(np.abs(np.diag(lu[0]))) > 1e-12:
                sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            sol = None
        if sol is None:
            # dependent active rows: regularize the dual block, solve in the LS sense
            Kr = K.copy()
            Kr[self.nv:, self.nv:] -= _DUAL_REG * np.eye(k)
            sol = scipy.linalg.lstsq(Kr, rhs, lapack_driver="gelsd")[0]
            if np.max(np.abs(K @ sol - rhs)) > 1e-6 * (1.0 + np.max(np.abs(rhs))):
                raise NumericalFailure("singular KKT system for the Huber active set")
        nv = self.nv
        return sol[:nv, 0], sol[nv:, 0], sol[:nv, 1], sol[nv:, 1]


@dataclass(frozen=True, eq=False)
class HuberKkt:
    """Primal-dual state of the Huber QP at ``z`` together with its direction.

    ``multipliers`` are the active multipliers in the order of
    ``active_set``; ``direction = (psi, gamma)`` gives their rates of change in
    ``z`` along with the primal's.
    """

    active_set: tuple[int, ...]
    primal: np.ndarray
    multipliers: np.ndarray
    direction: tuple[np.ndarray, np.ndarray]
    z: float
    qp: HuberQP

    @property
    def beta(self) -> np.ndarray:
        return self.primal[: self.qp.d]

    def full_multipliers(self) -> np.ndarray:
        out = np.zeros(self.qp.m)
        out[list(self.active_set)] = self.multipliers
        return out

    def stationarity_residual(self) -> float:
        qp = self.qp
        res = qp.P @ self.primal + qp.q + qp.S.T @ self.full_multipliers()
        return float(np.linalg.norm(res))

    def slack(self) -> np.ndarray:
        return self.qp.S @ self.primal - self.qp.h(self.z)


@dataclass(frozen=True)
class AddConstraint:
    j: int


@dataclass(frozen=True)
class DropConstraint:
    j: int


@dataclass(frozen=True)
class WindowEnd:
    pass


BreakpointEvent = Union[AddConstraint, DropConstraint, WindowEnd]


def _kkt_for_active(qp: HuberQP, active: tuple[int, ...], z: float) -> HuberKkt:
    r0, lam0, psi, gamma = qp.solve_active(active)
    return HuberKkt(active, r0 + psi * z, lam0 + gamma * z, (psi, gamma), z, qp)


def _mult_scale(qp: HuberQP, z: float) -> float:
    # multipliers are clipped residuals, so their size is set by min(delta, |y|)
    return min(qp.delta, 1.0 + float(np.max(np.abs(qp.y(z)))))


def _mult_tol(qp: HuberQP, z: float) -> float:
    return 1e-12 * _mult_scale(qp, z)


def kkt_from_beta(qp: HuberQP, beta: np.ndarray, z: float) -> HuberKkt:
    """Active set of positive multipliers from an optimal ``beta``, then its KKT state."""
    _, mult = qp.canonical_state(beta, z)
    active = set(int(j) for j in np.flatnonzero(mult > _mult_tol(qp, z)))
    # an exactly interpolated row pins beta through its equality even with a zero multiplier
    y = qp.y(z)
    e = y - qp.X @ beta
    tol = 1e-11 * (1.0 + np.abs(y))
    zero = np.flatnonzero(np.abs(e) <= tol)
    active.update(int(qp.n + i) for i in zero)
    # likewise a row sitting on the quadratic/linear boundary, through v >= 0
    edge = np.flatnonzero(np.abs(np.abs(e) - qp.delta) <= tol)
    active.update(int(4 * qp.n + i) for i in edge)
    return _kkt_for_active(qp, tuple(sorted(active)), z)


def _candidates(kkt: HuberKkt, tol_scale: float = 1.0):
    """All event times ``(t, kind, j)`` from the current state, sorted by ``t``."""
    qp = kkt.qp
    psi, gamma = kkt.direction
    active = np.asarray(kkt.active_set, dtype=int)
    inactive = np.setdiff1d(np.arange(qp.m), active)
    slope_tol = 1e-10 * tol_scale * (1.0 + float(np.max(np.abs(qp.u1))))
    out = []
    # rows leaving feasibility: slack (<= 0) rises to zero; the right-hand side moves with z too
    slack = (qp.S[inactive] @ kkt.primal) - qp.h(kkt.z)[inactive]
    rate = qp.S[inactive] @ psi - qp.u1[inactive]
    rising = rate > slope_tol
    for j, s, g in zip(inactive[rising], slack[rising], rate[rising]):
        out.append((max(-s / g, 0.0), "add", int(j)))
    falling = gamma < -slope_tol
    for j, lam, g in zip(active[falling], kkt.multipliers[falling], gamma[falling]):
        out.append((max(-lam / g, 0.0), "drop", int(j)))
    out.sort()
    return out


def _plus_plus(a: float) -> float:
    return a if a >= 0 else math.inf


def huber_breakpoint_step(kkt: HuberKkt, z: float | None = None) -> tuple[float, BreakpointEvent]:
    """Step length to the next active-set change and the constraint responsible.

    ``t1`` ranges over inactive rows whose slack grows toward zero and ``t2``
    over active multipliers heading to zero, each ratio passed through
    ``(a)_{++} = a if a >= 0 else inf``.
    """
    if z is not None and z != kkt.z:
        kkt = HuberKkt(kkt.active_set,
                       kkt.primal + kkt.direction[0] * (z - kkt.z),
                       kkt.multipliers + kkt.direction[1] * (z - kkt.z),
                       kkt.direction, z, kkt.qp)
    qp = kkt.qp
    psi, gamma = kkt.direction
    active = np.asarray(kkt.active_set, dtype=int)
    inactive = np.setdiff1d(np.arange(qp.m), active)
    slope_tol = 1e-10 * (1.0 + float(np.max(np.abs(qp.u1))))
    t1, j1 = math.inf, None
    slack = qp.S[inactive] @ kkt.primal - qp.h(kkt.z)[inactive]
    rate = qp.S[inactive] @ psi - qp.u1[inactive]
    for j, s, g in zip(inactive, slack, rate):
        if g > slope_tol:
            t = _plus_plus(-s / g)
            if t < t1:
                t1, j1 = t, int(j)
    t2, j2 = math.inf, None
    for j, lam, g in zip(active, kkt.multipliers, gamma):
        if abs(g) > slope_tol:
            t = _plus_plus(-lam / g)
            if t < t2:
                t2, j2 = t, int(j)
    if t1 == math.inf and t2 == math.inf:
        return math.inf, WindowEnd()
    if t1 <= t2:
        return t1, AddConstraint(j1)
    return t2, DropConstraint(j2)


def solve_huber(X: np.ndarray, y: np.ndarray, delta: float) -> tuple[np.ndarray, HuberKkt]:
    """Huber regression at a single response, with its certified KKT state."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not delta > 0:
        raise ValueError("delta must be positive")
    beta = huber_beta(X, y, delta)
    qp = HuberQP(X, y, np.zeros_like(y), delta)
    kkt = kkt_from_beta(qp, beta, 0.0)
    _certify(kkt)
    return kkt.beta.copy(), kkt


def _certify(kkt: HuberKkt, tol: float = 1e-8):
    scale = 1.0 + float(np.max(np.abs(kkt.qp.u0)))
    if kkt.stationarity_residual() > tol * scale:
        raise NumericalFailure("Huber KKT stationarity violated")
    slack = kkt.slack()
    if np.max(slack) > tol * scale:
        raise NumericalFailure("Huber KKT primal feasibility violated")
    if kkt.active_set and np.max(np.abs(slack[list(kkt.active_set)])) > tol * scale:
        raise NumericalFailure("Huber KKT complementarity violated")
    if kkt.multipliers.size and np.min(kkt.multipliers) < -1e-10 * scale:
        raise NumericalFailure("negative Huber multiplier")


def _valid(kkt: HuberKkt) -> bool:
    try:
        _certify(kkt, tol=1e-7)
    except NumericalFailure:
        return False
    return True


def _fresh(qp: HuberQP, z: float, beta_seed: np.ndarray | None) -> HuberKkt:
    beta = huber_beta(qp.X, qp.y(z), qp.delta, beta0=beta_seed)
    return kkt_from_beta(qp, beta, z)


def _valid_at(kkt: HuberKkt, z: float, tol: float = 1e-8) -> bool:
    """Whether the affine state of ``kkt``'s active set is primal-dual feasible at ``z``."""
    qp = kkt.qp
    psi, gamma = kkt.direction
    dz = z - kkt.z
    scale = 1.0 + float(np.max(np.abs(qp.h(z))))
    slack = qp.S @ (kkt.primal + psi * dz) - qp.h(z)
    mult = kkt.multipliers + gamma * dz
    return bool(np.max(slack) <= tol * scale and (mult.size == 0 or np.min(mult) >= -tol * scale))


def _restart(qp: HuberQP, z_event: float, z_hi: float, beta_seed: np.ndarray) -> HuberKkt:
    """Fresh state just past ``z_event`` whose active set is certified on the whole gap.

    Slacks and multipliers are affine in ``z`` for a fixed active set, so
    feasibility at both ends of ``[z_event, z_event + eps]`` covers the gap.
    """
    # A residual that crosses zero at z_event is still within rounding of zero
    # just past it and gets pinned; that state is valid but leaves at once. A
    # state whose own next event lies beyond the probe offset is preferred.
    eps = FRESH_OFFSET
    fallback = None
    while eps <= 1e-3:
        z_f = min(z_event + eps, z_hi)
        kkt = _fresh(qp, z_f, beta_seed)
        if _valid_at(kkt, z_f) and _valid_at(kkt, z_event):
            cands = _candidates(kkt)
            if not cands or cands[0][0] > eps or z_f >= z_hi:
                return kkt
            if fallback is None:
                fallback = kkt
        if z_f >= z_hi:
            break
        eps *= 100.0
    if fallback is not None:
        return fallback
    raise NumericalFailure(f"could not certify the Huber active set past z={z_event}")


def huber_path(X: np.ndarray, line: DataLine, delta: float, window: tuple[float, float],
               max_breakpoints: int | None = None, window_mult: float = 20.0) -> PiecewisePath:
    """Exact Huber coefficient path ``beta(z)`` for ``y(z) = a + b z`` over ``window``.

    Marches left to right. Isolated events update the active set by one row;
    ties and zero-length steps restart from a fresh solve just past the event.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    z_lo, z_hi = float(window[0]), float(window[1])
    if not (np.isfinite(z_lo) and np.isfinite(z_hi) and z_lo <= line.z_obs <= z_hi):
        raise WindowTooSmall(f"z_obs={line.z_obs} is not inside the finite window [{z_lo}, {z_hi}]")
    if max_breakpoints is None:
        max_breakpoints = int(10 * (n + d) * window_mult)
    qp = HuberQP(X, line.a, line.b, delta)
    kkt = _fresh(qp, z_lo, None)
    knots, intercepts, slopes = [z_lo], [], []
    seg_start = z_lo

    def close_segment(at: float, state: HuberKkt):
        psi = state.direction[0][:d]
        beta_at = state.beta + psi * (at - state.z)
        c = beta_at - psi * at
        # sign flips inside the quadratic zone change the active set but not beta
        if slopes and np.allclose(psi, slopes[-1], rtol=1e-9, atol=1e-11) and \
                np.allclose(c, intercepts[-1], rtol=1e-9, atol=1e-11 * (1.0 + abs(at))):
            knots[-1] = at
            return
        intercepts.append(c)
        slopes.append(psi.copy())
        knots.append(at)

    events = 0
    seen: set[tuple[int, ...]] = set()
    last_z = z_lo
    while True:
        cands = _candidates(kkt)
        if not cands or kkt.z + cands[0][0] >= z_hi:
            break
        t, kind, j = cands[0]
        z_event = kkt.z + t
        tied = len(cands) > 1 and cands[1][0] - t <= TIE_TOL
        if z_event > seg_start:
            close_segment(z_event, kkt)
            seg_start = z_event
        new = None
        if not tied:
            active = set(kkt.active_set)
            if kind == "add":
                active.add(j)
            else:
                active.discard(j)
            try:
                new = _kkt_for_active(qp, tuple(sorted(active)), z_event)
            except NumericalFailure:
                new = None
            if new is not None and not (_event_consistent(new, kind, j) and _valid_at(new, z_event)):
                new = None
        if new is None:
            beta_seed = kkt.beta + kkt.direction[0][:d] * (z_event - kkt.z)
            new = _restart(qp, z_event, z_hi, beta_seed)
        if z_event > last_z:
            seen.clear()
            last_z = z_event
        if new.active_set in seen:
            beta_seed = kkt.beta + kkt.direction[0][:d] * (z_event - kkt.z)
            new = _restart(qp, z_event, z_hi, beta_seed)
        seen.add(new.active_set)
        kkt = new
        events += 1
        if events > max_breakpoints:
            raise CycleDetected(f"Huber path exceeded {max_breakpoints} events")
    close_segment(z_hi, kkt)
    return PiecewisePath.from_segments(knots, intercepts, slopes)


def _event_consistent(kkt: HuberKkt, kind: str, j: int) -> bool:
    """An added row must carry a non-decreasing multiplier; a dropped row must stay feasible."""
    qp = kkt.qp
    psi, gamma = kkt.direction
    tol = 1e-10 * (1.0 + float(np.max(np.abs(qp.u1))))
    if kind == "add":
        k = kkt.active_set.index(j)
        if gamma[k] < -tol:
            return False
    else:
        if qp.S[j] @ psi - qp.u1[j] > tol:
            return False
    return bool(kkt.multipliers.size == 0 or np.min(kkt.multipliers) > -1e-9 * _mult_scale(qp, kkt.z))
