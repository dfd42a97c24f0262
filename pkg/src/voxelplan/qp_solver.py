"""Dense convex QP solver: operator splitting with active-set polishing.

Solves  min 0.5 x'Hx + g'x  subject to  A_eq x = b_eq,  lb <= A_in x <= ub,
with H symmetric positive semidefinite.  The core iteration is ADMM on the
stacked constraint system (equalities become two-sided rows with lb == ub)
after Ruiz equilibration and cost normalization.  At a fixed cadence the
current active-set estimate is polished by solving the reduced KKT system,
with repair passes that drop wrong-sign multipliers and admit violated
rows; a successful polish yields residuals near machine precision.

Everything is plain float64 numpy, and the iterate sequence is a pure
function of the inputs, so identical problems solve bitwise identically.
The cost normalization also makes the iterates invariant under a joint
positive rescaling of (H, g).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, NumericalBreakdown

_INF = float("inf")

try:
    from numba import njit as _njit

    @_njit(cache=True)
    def _admm_chunk(Kinv, As, AsT, rho, ls, us, x, z, y, sigma, gs, alpha, steps):
        for _ in range(steps):
            w = rho * z - y
            rhs = AsT @ w + sigma * x - gs
            xt = Kinv @ rhs
            zt = As @ xt
            for i in range(x.size):
                x[i] = alpha * xt[i] + (1.0 - alpha) * x[i]
            for j in range(z.size):
                zr = alpha * zt[j] + (1.0 - alpha) * z[j]
                zn = zr + y[j] / rho[j]
                if zn < ls[j]:
                    zn = ls[j]
                elif zn > us[j]:
                    zn = us[j]
                y[j] = y[j] + rho[j] * (zr - zn)
                z[j] = zn

except ImportError:  # pragma: no cover - numba is expected but optional

    def _admm_chunk(Kinv, As, AsT, rho, ls, us, x, z, y, sigma, gs, alpha, steps):
        for _ in range(steps):
            rhs = AsT @ (rho * z - y)
            rhs += sigma * x
            rhs -= gs
            xt = Kinv @ rhs
            zt = As @ xt
            x[:] = alpha * xt + (1.0 - alpha) * x
            zr = alpha * zt + (1.0 - alpha) * z
            zn = np.minimum(np.maximum(zr + y / rho, ls), us)
            y += rho * (zr - zn)
            z[:] = zn


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class QpOptions:
    tolerance: float = 1e-6
    max_iterations: int = 3000
    regularization: float = 1e-9
    rho: float = 0.1
    sigma: float = 1e-6
    relaxation: float = 1.6
    check_interval: int = 25
    polish_interval: int = 250
    rho_update_interval: int = 200
    stall_iterations: int = 200
    infeasibility_tolerance: float = 1e-4
    scaling_iterations: int = 10


@dataclass(frozen=True)
class Multipliers:
    """Lagrange multipliers: lam for equalities, mu_lb/mu_ub >= 0 for bounds."""

    lam: np.ndarray
    mu_lb: np.ndarray
    mu_ub: np.ndarray


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def max_residual(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    objective: float
    status: SolveStatus
    kkt_residuals: KktResiduals
    multipliers: Multipliers
    iterations: int


@dataclass
class QpProblem:
    """Quadratic objective with linear equalities and two-sided inequalities."""

    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        if self.H.shape != (n, n):
            raise DimensionMismatch(f"H shape {self.H.shape} vs g size {n}")
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_in is None:
            self.A_in = np.zeros((0, n))
            self.lb = np.zeros(0)
            self.ub = np.zeros(0)
        else:
            self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float))
            self.lb = np.asarray(self.lb, dtype=float).ravel()
            self.ub = np.asarray(self.ub, dtype=float).ravel()
        if self.A_eq.shape[1] != n or self.A_in.shape[1] != n:
            raise DimensionMismatch("constraint matrices disagree with variable count")
        if self.b_eq.size != self.A_eq.shape[0]:
            raise DimensionMismatch("b_eq length mismatch")
        if self.lb.size != self.A_in.shape[0] or self.ub.size != self.A_in.shape[0]:
            raise DimensionMismatch("inequality bound length mismatch")
        if np.any(self.lb > self.ub):
            raise ValueError("lb must not exceed ub")

    @property
    def dimension(self) -> int:
        return self.g.size

    def validate_convexity(self, tol: float = 1e-8) -> None:
        sym_err = float(np.abs(self.H - self.H.T).max()) if self.H.size else 0.0
        if sym_err > 1e-9 * max(1.0, float(np.abs(self.H).max())):
            raise ValueError(f"H not symmetric (max asymmetry {sym_err:.2e})")
        if self.H.size:
            w_min = float(np.linalg.eigvalsh(0.5 * (self.H + self.H.T)).min())
            if w_min < -tol * max(1.0, float(np.abs(self.H).max())):
                raise ValueError(f"H not positive semidefinite (lambda_min {w_min:.2e})")

    def objective_value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


def _stack(problem: QpProblem):
    A = np.vstack([problem.A_eq, problem.A_in])
    l = np.concatenate([problem.b_eq, problem.lb])
    u = np.concatenate([problem.b_eq, problem.ub])
    return A, l, u


def _scale_problem(H, g, A, iterations: int):
    """Cost normalization followed by Ruiz equilibration of [[cH, A'],[A, 0]].

    The leading cost factor makes the scaled data (hence every iterate)
    identical under a joint positive rescaling of H and g.
    """
    n = g.size
    m = A.shape[0]
    c = 1.0 / max(float(np.abs(H).max(initial=0.0)), float(np.abs(g).max(initial=0.0)), 1e-12)
    Hs = c * H
    As = A.copy()
    D = np.ones(n)
    E = np.ones(m)
    for _ in range(iterations):
        col = np.maximum(
            np.abs(Hs).max(axis=0) if n else np.zeros(0),
            np.abs(As).max(axis=0) if m else np.zeros(n),
        )
        row = np.abs(As).max(axis=1) if m else np.zeros(0)
        dx = 1.0 / np.sqrt(np.maximum(col, 1e-12))
        de = 1.0 / np.sqrt(np.maximum(row, 1e-12))
        Hs = dx[:, None] * Hs * dx[None, :]
        As = de[:, None] * As * dx[None, :]
        D *= dx
        E *= de
    gs = c * (D * g)
    return Hs, gs, As, D, E, c


def _factorize(Hs, sigma, rho_vec, As, regularization):
    K = Hs + (sigma + regularization) * np.eye(Hs.shape[0])
    if As.shape[0]:
        K = K + (As.T * rho_vec) @ As
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        K = K + 1e4 * regularization * np.eye(Hs.shape[0])
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("KKT factorization failed") from exc
    inv_l = np.linalg.inv(L)
    return inv_l.T @ inv_l


def check_kkt(problem: QpProblem, x: np.ndarray, multipliers: Multipliers) -> KktResiduals:
    """KKT residuals of a candidate point with sign-split bound multipliers."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != problem.dimension:
        raise DimensionMismatch("x length mismatch")
    lam = np.asarray(multipliers.lam, dtype=float).ravel()
    mu_lb = np.asarray(multipliers.mu_lb, dtype=float).ravel()
    mu_ub = np.asarray(multipliers.mu_ub, dtype=float).ravel()
    me, mi = problem.A_eq.shape[0], problem.A_in.shape[0]
    if lam.size != me or mu_lb.size != mi or mu_ub.size != mi:
        raise DimensionMismatch("multiplier length mismatch")

    grad = problem.H @ x + problem.g
    if me:
        grad = grad + problem.A_eq.T @ lam
    if mi:
        grad = grad + problem.A_in.T @ (mu_ub - mu_lb)
    stationarity = float(np.abs(grad).max(initial=0.0))

    primal = 0.0
    if me:
        primal = float(np.abs(problem.A_eq @ x - problem.b_eq).max())
    comp = 0.0
    dual = float(max(np.maximum(-mu_lb, 0.0).max(initial=0.0),
                     np.maximum(-mu_ub, 0.0).max(initial=0.0)))
    if mi:
        ax = problem.A_in @ x
        lo_viol = np.where(np.isfinite(problem.lb), problem.lb - ax, -_INF)
        hi_viol = np.where(np.isfinite(problem.ub), ax - problem.ub, -_INF)
        primal = max(primal, float(lo_viol.max(initial=0.0)), float(hi_viol.max(initial=0.0)), 0.0)
        # A positive multiplier pointing at an infinite bound is a dual violation.
        dual = max(dual, float(np.where(np.isinf(problem.lb), mu_lb, 0.0).max(initial=0.0)))
        dual = max(dual, float(np.where(np.isinf(problem.ub), mu_ub, 0.0).max(initial=0.0)))
        gap_lo = np.where(np.isfinite(problem.lb), np.abs(ax - problem.lb), 0.0)
        gap_hi = np.where(np.isfinite(problem.ub), np.abs(ax - problem.ub), 0.0)
        comp = float(max((np.maximum(mu_lb, 0.0) * gap_lo).max(initial=0.0),
                         (np.maximum(mu_ub, 0.0) * gap_hi).max(initial=0.0)))
    primal = max(primal, 0.0)
    return KktResiduals(stationarity, primal, dual, comp)


def _split_multipliers(problem: QpProblem, y: np.ndarray) -> Multipliers:
    me = problem.A_eq.shape[0]
    lam = y[:me]
    y_in = y[me:]
    return Multipliers(lam=lam, mu_lb=np.maximum(-y_in, 0.0), mu_ub=np.maximum(y_in, 0.0))


def _polish(problem: QpProblem, x, y, options: QpOptions, max_passes: int = 8):
    """Reduced-KKT solve on the detected active set, with repair passes.

    Wrong-sign multipliers leave the active set and violated rows join it;
    if the repair never stabilizes, the pass with the smallest KKT residual
    wins (it may still meet the solver tolerance).  Returns (x, y) or None.
    """
    A, l, u = _stack(problem)
    m, n = A.shape
    me = problem.A_eq.shape[0]
    if m == 0:
        return None
    ax = A @ x
    scale = 1.0 + np.maximum(
        np.abs(np.where(np.isfinite(l), l, 0.0)), np.abs(np.where(np.isfinite(u), u, 0.0))
    )
    tol = 1e-5
    fin_l, fin_u = np.isfinite(l), np.isfinite(u)
    low = fin_l & (((ax - l) < tol * scale) | (y < -tol))
    upp = fin_u & (((u - ax) < tol * scale) | (y > tol))
    active = low | upp
    active[:me] = True
    use_upper = upp & ~low
    ineq = np.zeros(m, dtype=bool)
    ineq[me:] = True
    two_sided = l != u
    reg = max(options.regularization * 1e-2, 1e-12)
    candidates = []  # iterates from unstable repair passes, judged lazily

    for _ in range(max_passes):
        idx = np.nonzero(active)[0]
        k = idx.size
        if k == 0:
            try:
                xn = np.linalg.solve(problem.H + reg * np.eye(n), -problem.g)
            except np.linalg.LinAlgError:
                return None
            yn = np.zeros(m)
        else:
            A_act = A[idx]
            b_act = np.where(use_upper[idx], u[idx], l[idx])
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = problem.H + reg * np.eye(n)
            kkt[:n, n:] = A_act.T
            kkt[n:, :n] = A_act
            kkt[n:, n:] = -reg * np.eye(k)
            rhs = np.concatenate([-problem.g, b_act])
            try:
                sol = np.linalg.solve(kkt, rhs)
                resid = rhs - kkt @ sol
                if float(np.abs(resid).max(initial=0.0)) > 1e-11 * (1.0 + float(np.abs(rhs).max(initial=0.0))):
                    sol = sol + np.linalg.solve(kkt, resid)
            except np.linalg.LinAlgError:
                return None
            xn = sol[:n]
            yn = np.zeros(m)
            yn[idx] = sol[n:]
        if not np.isfinite(xn).all():
            return None

        drop = ineq & active & two_sided & use_upper & (yn < -1e-9)
        drop |= ineq & active & two_sided & ~use_upper & (yn > 1e-9)
        axn = A @ xn
        viol_lo = ineq & ~active & fin_l & (l - axn > 1e-9 * scale)
        viol_hi = ineq & ~active & fin_u & (axn - u > 1e-9 * scale)
        if not (drop.any() or viol_lo.any() or viol_hi.any()):
            return xn, yn
        candidates.append((xn, yn))
        active = (active & ~drop) | viol_lo | viol_hi
        use_upper = np.where(viol_hi, True, np.where(viol_lo, False, use_upper))
    best = None
    for xn, yn in candidates:
        res = check_kkt(problem, xn, _split_multipliers(problem, yn)).max_residual()
        if res <= options.tolerance and (best is None or res < best[0]):
            best = (res, xn, yn)
    return None if best is None else (best[1], best[2])


def solve(problem: QpProblem, options: QpOptions | None = None, x0: np.ndarray | None = None) -> QpSolution:
    """Minimize the QP; returns the best point with status and KKT residuals.

    ``x0`` optionally warm-starts the primal iterate (it need not be
    feasible).  Status OPTIMAL certifies that every KKT residual is at or
    below the configured tolerance.
    """
    options = options or QpOptions()
    problem.validate_convexity()
    n = problem.dimension
    A_u, l_u, u_u = _stack(problem)
    m = A_u.shape[0]
    me = problem.A_eq.shape[0]

    if m == 0:
        Hr = problem.H + options.regularization * np.eye(n)
        try:
            x = np.linalg.solve(Hr, -problem.g)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("unconstrained solve failed") from exc
        mult = Multipliers(np.zeros(0), np.zeros(0), np.zeros(0))
        res = check_kkt(problem, x, mult)
        return QpSolution(x, problem.objective_value(x), SolveStatus.OPTIMAL, res, mult, 0)

    Hs, gs, As, D, E, cost_scale = _scale_problem(
        problem.H, problem.g, A_u, options.scaling_iterations
    )
    ls = E * l_u
    us = E * u_u

    rho_vec = np.full(m, options.rho)
    rho_vec[:me] *= 1e3  # stiffer equality rows
    Kinv = _factorize(Hs, options.sigma, rho_vec, As, options.regularization)
    AsT = np.ascontiguousarray(As.T)

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / D
    z = np.clip(As @ x, ls, us)
    y = np.zeros(m)
    alpha = options.relaxation
    sigma = options.sigma

    def unscaled():
        return D * x, (E * y) / cost_scale

    def finish(xf, yf, status, iters):
        mult = _split_multipliers(problem, yf)
        res = check_kkt(problem, xf, mult)
        if status is not SolveStatus.INFEASIBLE:
            status = (
                SolveStatus.OPTIMAL
                if res.max_residual() <= options.tolerance
                else SolveStatus.MAX_ITERATIONS
            )
        return QpSolution(xf, problem.objective_value(xf), status, res, mult, iters)

    best_primal = _INF
    best_violation = _INF  # best constraint violation seen at any iterate
    last_improve = 0
    polish_failed_once = False
    polish_gap = options.polish_interval
    next_polish = polish_gap
    last_rho_update = 0
    y_prev_check = y.copy()
    fin_l, fin_u = np.isfinite(l_u), np.isfinite(u_u)

    k = 0
    while k < options.max_iterations:
        steps = min(options.check_interval, options.max_iterations - k)
        _admm_chunk(Kinv, As, AsT, rho_vec, ls, us, x, z, y, sigma, gs, alpha, steps)
        k += steps

        at_end = k >= options.max_iterations
        if k >= next_polish or at_end:
            x_u, y_u = unscaled()
            polished = _polish(problem, x_u, y_u, options)
            if polished is not None:
                res = check_kkt(problem, polished[0], _split_multipliers(problem, polished[1]))
                if res.max_residual() <= options.tolerance:
                    return finish(polished[0], polished[1], SolveStatus.OPTIMAL, k)
            polish_failed_once = True
            # Back off: a failed polish means the active set is still moving.
            polish_gap *= 2
            next_polish = k + polish_gap

        # Residuals in unscaled quantities, once per chunk.
        x_u, y_u = unscaled()
        z_u = z / E
        ax_u = A_u @ x_u
        r_prim = float(np.abs(ax_u - z_u).max(initial=0.0))
        hx = problem.H @ x_u
        aty = A_u.T @ y_u
        r_dual = float(np.abs(hx + problem.g + aty).max(initial=0.0))
        norm_p = max(float(np.abs(ax_u).max(initial=0.0)), float(np.abs(z_u).max(initial=0.0)))
        norm_d = max(
            float(np.abs(hx).max(initial=0.0)),
            float(np.abs(aty).max(initial=0.0)),
            float(np.abs(problem.g).max(initial=0.0)),
        )
        eps_p = options.tolerance * (1.0 + norm_p)
        eps_d = options.tolerance * (1.0 + norm_d)
        if r_prim <= eps_p and r_dual <= eps_d:
            polished = _polish(problem, x_u, y_u, options)
            if polished is not None:
                res = check_kkt(problem, polished[0], _split_multipliers(problem, polished[1]))
                own = check_kkt(problem, x_u, _split_multipliers(problem, y_u))
                if res.max_residual() <= own.max_residual():
                    return finish(polished[0], polished[1], SolveStatus.OPTIMAL, k)
            return finish(x_u, y_u, SolveStatus.OPTIMAL, k)

        # Primal infeasibility certificate from the dual increments.
        dy = y - y_prev_check
        y_prev_check = y.copy()
        norm_dy = float(np.abs(dy).max(initial=0.0))
        if norm_dy > 1e-12:
            dy_u = E * (dy / norm_dy)
            at_dy = float(np.abs(A_u.T @ dy_u).max(initial=0.0))
            pos, neg = np.maximum(dy_u, 0.0), np.minimum(dy_u, 0.0)
            support = 0.0
            cert_ok = True
            for bound, part in ((u_u, pos), (l_u, neg)):
                finite = np.isfinite(bound)
                if np.any(np.abs(part[~finite]) > options.infeasibility_tolerance):
                    cert_ok = False
                    break
                support += float(bound[finite] @ part[finite])
            if (
                cert_ok
                and at_dy <= options.infeasibility_tolerance
                and support < -options.infeasibility_tolerance
            ):
                return finish(x_u, y_u, SolveStatus.INFEASIBLE, k)

        violation = max(
            float(np.where(fin_l, l_u - ax_u, -_INF).max(initial=0.0)),
            float(np.where(fin_u, ax_u - u_u, -_INF).max(initial=0.0)),
            0.0,
        )
        best_violation = min(best_violation, violation)
        if r_prim < 0.999 * best_primal:
            best_primal = r_prim
            last_improve = k
        elif (
            k - last_improve >= options.stall_iterations
            and k >= 2000
            and polish_failed_once
            and r_prim > max(1e3 * eps_p, 0.02 * (1.0 + norm_p))
            # an almost-feasible iterate rules the stall verdict out
            and best_violation > 1e-3 * (1.0 + norm_p)
        ):
            return finish(x_u, y_u, SolveStatus.INFEASIBLE, k)

        if k - last_rho_update >= options.rho_update_interval:
            last_rho_update = k
            ratio = np.sqrt(
                (r_prim / max(norm_p, 1e-12)) / max(r_dual / max(norm_d, 1e-12), 1e-12)
            )
            ratio = float(np.clip(ratio, 1e-3, 1e3))
            if ratio > 5.0 or ratio < 0.2:
                rho_vec = np.clip(rho_vec * ratio, 1e-6, 1e6)
                Kinv = np.ascontiguousarray(
                    _factorize(Hs, sigma, rho_vec, As, options.regularization)
                )

    x_u, y_u = unscaled()
    return finish(x_u, y_u, SolveStatus.MAX_ITERATIONS, options.max_iterations)
