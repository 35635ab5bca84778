"""Dense convex QP solver for the controller's per-step subproblem.

Solves

    minimize    1/2 z'Hz + g'z
    subject to  lb <= A z <= ub        (rows may use +-inf)

with the operator-splitting scheme popularized by OSQP: one Cholesky
factorization of H + sigma I + rho A'A up front, then cheap iterations
of a KKT solve, a box projection, and a dual update with
over-relaxation. Problem data are Ruiz-equilibrated first so the
iteration behaves across the wildly different row scales an MPC
condensing step produces. A converged iterate is refined by solving the
KKT equations of the detected active set; the refinement is kept only
when it lowers the KKT residual.

The per-iteration work lives in a compiled loop with a numpy twin (see
_accel). Problems here are tiny (tens of variables), so everything is
dense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import NUMBA_ENABLED, njit

__all__ = ["QPSolution", "solve_qp", "kkt_check"]

INF = 1e20          # bounds at or beyond this magnitude count as infinite
RUIZ_ITERS = 10
CHECK_EVERY = 25


@dataclass(frozen=True)
class QPSolution:
    z: np.ndarray
    lam: np.ndarray
    status: str                 # "optimal" | "max_iter" | "infeasible"
    iterations: int
    obj: float
    kkt_residual: float


def _clean_bounds(lb, ub):
    lb = np.where(np.asarray(lb, dtype=np.float64) < -INF, -np.inf, lb).astype(np.float64)
    ub = np.where(np.asarray(ub, dtype=np.float64) > INF, np.inf, ub).astype(np.float64)
    return lb, ub


def kkt_check(H, g, A, lb, ub, z, lam) -> float:
    """Max KKT violation: stationarity, feasibility, sign, complementarity.

    Complementarity uses the min(dual, slack) form, which stays finite
    and meaningful for one-sided rows.
    """
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    lb, ub = _clean_bounds(lb, ub)
    z = np.asarray(z, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)

    stat = np.max(np.abs(H @ z + g + A.T @ lam)) if A.size else np.max(np.abs(H @ z + g))
    az = A @ z
    s_up = ub - az
    s_lo = az - lb
    pri = max(0.0, float(np.max(-np.minimum(s_up, s_lo), initial=0.0)))
    lam_pos = np.maximum(lam, 0.0)
    lam_neg = np.maximum(-lam, 0.0)
    comp_u = float(np.max(np.minimum(lam_pos, np.maximum(s_up, 0.0)), initial=0.0))
    comp_l = float(np.max(np.minimum(lam_neg, np.maximum(s_lo, 0.0)), initial=0.0))
    return max(float(stat), pri, comp_u, comp_l)


# --------------------------------------------------------------- scaling


def _ruiz(H, A, g):
    """Symmetric equilibration of the stacked [H; A] system."""
    n = H.shape[0]
    m = A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    Hs, As = H.copy(), A.copy()
    for _ in range(RUIZ_ITERS):
        cn = np.maximum(np.abs(Hs).max(axis=0), np.abs(As).max(axis=0)
                        if m else 0.0)
        cn = np.where(cn > 0, cn, 1.0)
        sc = 1.0 / np.sqrt(cn)
        Hs = Hs * sc[:, None] * sc[None, :]
        As = As * sc[None, :]
        d *= sc
        if m:
            rn = np.abs(As).max(axis=1)
            rn = np.where(rn > 0, rn, 1.0)
            sr = 1.0 / np.sqrt(rn)
            As = As * sr[:, None]
            e *= sr
    gs = g * d
    cost = np.abs(gs).max()
    c = 1.0 / cost if cost > 1e-12 else 1.0
    return Hs * c, As, gs * c, d, e, c


# ------------------------------------------------------------ inner loop


@njit(cache=True)
def _tri_solve(L, b):
    n = b.size
    x = b.copy()
    for i in range(n):                       # forward, L x = b
        s = x[i]
        for j in range(i):
            s -= L[i, j] * x[j]
        x[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):           # backward, L' y = x
        s = x[i]
        for j in range(i + 1, n):
            s -= L[j, i] * x[j]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _admm_loops(L, H, g, A, lb, ub, x, zc, y,
                rho, sigma, relax, tol, max_iter,
                dinv, einv, cinv):
    m = zc.size
    status = 2                      # max_iter unless proven otherwise
    it_done = 0
    for it in range(max_iter):
        rhs = sigma * x - g + A.T @ (rho * zc - y)
        xt = _tri_solve(L, rhs)
        vt = A @ xt
        x = relax * xt + (1.0 - relax) * x
        w = relax * vt + (1.0 - relax) * zc
        u = w + y / rho
        zc_new = np.minimum(np.maximum(u, lb), ub)
        y_new = rho * (u - zc_new)
        dy = y_new - y
        zc = zc_new
        y = y_new
        it_done = it + 1

        if (it + 1) % CHECK_EVERY == 0 or it == max_iter - 1:
            ax = A @ x
            pri_vec = (ax - zc) * einv
            pri = np.max(np.abs(pri_vec)) if m else 0.0
            hx = H @ x
            aty = A.T @ y
            dua_vec = (hx + g + aty) * dinv * cinv
            dua = np.max(np.abs(dua_vec))
            eps_pri = tol * (1.0 + max(np.max(np.abs(ax * einv)),
                                       np.max(np.abs(zc * einv))))
            eps_dua = tol * (1.0 + max(np.max(np.abs(hx * dinv)) * cinv,
                                       max(np.max(np.abs(aty * dinv)) * cinv,
                                           np.max(np.abs(g * dinv)) * cinv)))
            if pri <= eps_pri and dua <= eps_dua:
                status = 1
                break
            # primal infeasibility certificate from the dual increment
            ndy = np.max(np.abs(dy))
            if ndy > 1e-12:
                aty_dy = np.max(np.abs(A.T @ dy))
                if aty_dy <= 1e-8 * ndy:
                    support = 0.0
                    ok = True
                    for i in range(m):
                        dpos = max(dy[i], 0.0)
                        dneg = min(dy[i], 0.0)
                        if np.isinf(ub[i]):
                            if dpos > 1e-8 * ndy:
                                ok = False
                                break
                        else:
                            support += ub[i] * dpos
                        if np.isinf(lb[i]):
                            if -dneg > 1e-8 * ndy:
                                ok = False
                                break
                        else:
                            support += lb[i] * dneg
                    if ok and support <= -1e-8 * ndy:
                        status = 3
                        break
    return x, zc, y, status, it_done


def _admm_numpy(L, H, g, A, lb, ub, x, zc, y, rho, sigma, relax, tol,
                max_iter, dinv, einv, cinv):
    from scipy.linalg import cho_solve
    m = zc.size
    status = 2
    it_done = 0
    for it in range(max_iter):
        rhs = sigma * x - g + A.T @ (rho * zc - y)
        xt = cho_solve((L, True), rhs, check_finite=False)
        vt = A @ xt
        x = relax * xt + (1.0 - relax) * x
        u = relax * vt + (1.0 - relax) * zc + y / rho
        zc_new = np.clip(u, lb, ub)
        y_new = rho * (u - zc_new)
        dy = y_new - y
        zc, y = zc_new, y_new
        it_done = it + 1
        if (it + 1) % CHECK_EVERY == 0 or it == max_iter - 1:
            ax = A @ x
            pri = np.max(np.abs((ax - zc) * einv)) if m else 0.0
            hx = H @ x
            aty = A.T @ y
            dua = np.max(np.abs((hx + g + aty) * dinv)) * cinv
            eps_pri = tol * (1.0 + max(np.max(np.abs(ax * einv)),
                                       np.max(np.abs(zc * einv))))
            eps_dua = tol * (1.0 + cinv * max(np.max(np.abs(hx * dinv)),
                                              np.max(np.abs(aty * dinv)),
                                              np.max(np.abs(g * dinv))))
            if pri <= eps_pri and dua <= eps_dua:
                status = 1
                break
            ndy = np.max(np.abs(dy))
            if ndy > 1e-12 and np.max(np.abs(A.T @ dy)) <= 1e-8 * ndy:
                dpos = np.maximum(dy, 0.0)
                dneg = np.minimum(dy, 0.0)
                bad = (np.isinf(ub) & (dpos > 1e-8 * ndy)) | \
                      (np.isinf(lb) & (-dneg > 1e-8 * ndy))
                if not np.any(bad):
                    support = float(np.sum(np.where(np.isinf(ub), 0.0, ub) * dpos)
                                    + np.sum(np.where(np.isinf(lb), 0.0, lb) * dneg))
                    if support <= -1e-8 * ndy:
                        status = 3
                        break
    return x, zc, y, status, it_done


_admm_impl = _admm_loops if NUMBA_ENABLED else _admm_numpy


# ---------------------------------------------------------------- polish


def _polish(H, g, A, lb, ub, z, lam):
    low = lam < -1e-9
    up = lam > 1e-9
    act = low | up
    if not np.any(act):
        return z, lam
    A_act = A[act]
    b_act = np.where(up[act], ub[act], lb[act])
    if np.any(~np.isfinite(b_act)):
        return z, lam
    n = H.shape[0]
    k = A_act.shape[0]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = H
    kkt[:n, n:] = A_act.T
    kkt[n:, :n] = A_act
    rhs = np.concatenate([-g, b_act])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    z_new = sol[:n]
    lam_new = np.zeros_like(lam)
    lam_new[act] = sol[n:]
    return z_new, lam_new


# ----------------------------------------------------------------- solve


def solve_qp(H, g, A=None, lb=None, ub=None, *, rho=0.1, sigma=1e-6,
             relax=1.6, tol=1e-6, max_iter=25000, warm=None) -> QPSolution:
    """Solve the box-inequality QP; never raises on solver trouble.

    Returns status "optimal", "max_iter" (best iterate so far), or
    "infeasible" (certificate found or contradictory bounds).
    """
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    n = H.shape[0]
    g = np.asarray(g, dtype=np.float64).ravel()
    if A is None or np.size(A) == 0:
        A = np.zeros((0, n))
        lb = np.zeros(0)
        ub = np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    lb, ub = _clean_bounds(np.asarray(lb, dtype=np.float64).ravel(),
                           np.asarray(ub, dtype=np.float64).ravel())
    m = A.shape[0]

    if np.any(lb > ub):
        return QPSolution(z=np.zeros(n), lam=np.zeros(m), status="infeasible",
                          iterations=0, obj=math.nan, kkt_residual=math.inf)

    if m == 0:
        z, *_ = np.linalg.lstsq(H, -g, rcond=None)
        res = kkt_check(H, g, A, lb, ub, z, np.zeros(0))
        return QPSolution(z=z, lam=np.zeros(0),
                          status="optimal" if res <= tol else "max_iter",
                          iterations=0, obj=float(0.5 * z @ H @ z + g @ z),
                          kkt_residual=float(res))

    Hs, As, gs, d, e, c = _ruiz(H, A, g)
    lbs = lb * e
    ubs = ub * e

    kkt_mat = Hs + sigma * np.eye(n) + rho * (As.T @ As)
    try:
        L = np.linalg.cholesky(kkt_mat)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(kkt_mat + 1e-4 * np.eye(n))

    if warm is not None:
        x0 = np.asarray(warm[0], dtype=np.float64) / d
        y0 = np.asarray(warm[1], dtype=np.float64) * (c / e) if m else np.zeros(0)
        zc0 = np.clip(As @ x0, lbs, ubs)
    else:
        x0 = np.zeros(n)
        zc0 = np.zeros(m)
        y0 = np.zeros(m)

    x, zc, y, code, iters = _admm_impl(
        L, Hs, gs, As, lbs, ubs, x0, zc0, y0, rho, sigma, relax, tol,
        max_iter, 1.0 / d, 1.0 / e, 1.0 / c)

    z_u = x * d
    lam_u = (y * e / c) if m else np.zeros(0)

    if code == 3:
        return QPSolution(z=z_u, lam=lam_u, status="infeasible",
                          iterations=iters, obj=math.nan, kkt_residual=math.inf)

    res = kkt_check(H, g, A, lb, ub, z_u, lam_u)
    # the scaled stopping test can leave the unscaled residual above tol
    # on badly scaled data; resume tighter until the real one certifies
    inner = tol
    while code == 1 and res > tol and iters < max_iter:
        inner *= 1e-2
        x, zc, y, code, more = _admm_impl(
            L, Hs, gs, As, lbs, ubs, x, zc, y, rho, sigma, relax, inner,
            max_iter - iters, 1.0 / d, 1.0 / e, 1.0 / c)
        iters += more
        z_u = x * d
        lam_u = (y * e / c) if m else np.zeros(0)
        if code == 3:
            return QPSolution(z=z_u, lam=lam_u, status="infeasible",
                              iterations=iters, obj=math.nan,
                              kkt_residual=math.inf)
        res = kkt_check(H, g, A, lb, ub, z_u, lam_u)

    if m:
        z_p, lam_p = _polish(H, g, A, lb, ub, z_u, lam_u)
        res_p = kkt_check(H, g, A, lb, ub, z_p, lam_p)
        if np.all(np.isfinite(z_p)) and res_p < res:
            z_u, lam_u, res = z_p, lam_p, res_p

    status = "optimal" if res <= tol else "max_iter"
    obj = float(0.5 * z_u @ H @ z_u + g @ z_u)
    return QPSolution(z=z_u, lam=lam_u, status=status, iterations=iters,
                      obj=obj, kkt_residual=float(res))
