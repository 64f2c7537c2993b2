"""Box-constrained convex QP solver.

Solves   minimize 1/2 x'Hx + g'x   subject to   l <= Ax <= u

with an operator-splitting (ADMM) iteration with over-relaxation, per-row
penalty boosting for equality rows, one adaptive penalty rescale, and an
active-set polish step that refines the final iterate by solving the reduced
KKT system directly.  Deterministic for fixed inputs and settings.

Both planner levels (quintic seed fit and the Frenet MPC) reuse this solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

SOLVED = "solved"
MAX_ITER = "max_iter"
PRIMAL_INFEASIBLE = "primal_infeasible"

_EQ_TOL = 1e-12


@dataclass
class QpSettings:
    """Solver settings.

    eps_abs/eps_rel     termination tolerances on the KKT residuals
    max_iter            ADMM iteration cap
    rho                 base penalty (equality rows get rho * 1e3)
    sigma               primal regularization in the KKT system
    alpha               over-relaxation factor
    polish_every        attempt an early active-set polish this often
    """

    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    polish: bool = True
    polish_every: int = 100
    polish_delta: float = 1e-9
    eps_pinf: float = 1e-9
    check_every: int = 1


@dataclass
class QpProblem:
    """Problem data; H must be symmetric PSD, bounds ordered l <= u."""

    h: np.ndarray
    g: np.ndarray
    a: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        self.a = np.asarray(self.a, dtype=float).reshape(-1, self.h.shape[0])
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        n = self.h.shape[0]
        if self.h.shape != (n, n) or self.g.shape != (n,):
            raise ValueError("inconsistent H/g dimensions")
        scale = max(1.0, float(np.max(np.abs(self.h))))
        if np.max(np.abs(self.h - self.h.T)) > 1e-10 * scale:
            raise ValueError("H must be symmetric")
        m = self.a.shape[0]
        if self.l.shape != (m,) or self.u.shape != (m,):
            raise ValueError("inconsistent constraint dimensions")
        if np.any(self.l > self.u):
            raise ValueError("constraint bounds must satisfy l <= u")

    @property
    def n(self):
        return self.h.shape[0]

    @property
    def m(self):
        return self.a.shape[0]

    def objective(self, x):
        return 0.5 * float(x @ self.h @ x) + float(self.g @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    objective: float = 0.0
    polished: bool = False


def _residuals(prob: QpProblem, x, y):
    if prob.m:
        ax = prob.a @ x
        r_prim = float(np.max(np.abs(ax - np.clip(ax, prob.l, prob.u))))
        aty = prob.a.T @ y
        prim_scale = float(np.max(np.abs(ax)))
    else:
        r_prim = 0.0
        aty = 0.0
        prim_scale = 0.0
    dual_vec = prob.h @ x + prob.g + aty
    r_dual = float(np.max(np.abs(dual_vec))) if prob.n else 0.0
    dual_scale = max(
        float(np.max(np.abs(prob.h @ x))) if prob.n else 0.0,
        float(np.max(np.abs(aty))) if prob.m else 0.0,
        float(np.max(np.abs(prob.g))) if prob.n else 0.0,
    )
    return r_prim, r_dual, prim_scale, dual_scale


def _polish(prob: QpProblem, x, y, settings: QpSettings):
    """Solve the KKT system restricted to the detected active set."""
    n, m = prob.n, prob.m
    eq = (prob.u - prob.l) <= _EQ_TOL * (1.0 + np.abs(prob.u))
    low = (y < -settings.polish_delta) & ~eq
    upp = (y > settings.polish_delta) & ~eq
    act = np.nonzero(eq | low | upp)[0]
    b = np.where(eq | low, prob.l, prob.u)[act]
    a_act = prob.a[act]
    k = len(act)

    delta = settings.polish_delta
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = prob.h + delta * np.eye(n)
    kkt[:n, n:] = a_act.T
    kkt[n:, :n] = a_act
    kkt[n:, n:] = -delta * np.eye(k)
    rhs = np.concatenate([-prob.g, b])
    try:
        lu = sla.lu_factor(kkt)
    except (ValueError, sla.LinAlgError):
        return None
    sol = sla.lu_solve(lu, rhs)
    # Iterative refinement against the unregularized KKT matrix.
    kkt0 = kkt.copy()
    kkt0[:n, :n] -= delta * np.eye(n)
    kkt0[n:, n:] += delta * np.eye(k)
    for _ in range(3):
        resid = rhs - kkt0 @ sol
        sol = sol + sla.lu_solve(lu, resid)
    x_pol = sol[:n]
    y_pol = np.zeros(m)
    y_pol[act] = sol[n:]
    if not np.all(np.isfinite(x_pol)):
        return None
    return x_pol, y_pol


def solve_qp(prob: QpProblem, settings: QpSettings | None = None, warm_start=None) -> QpSolution:
    """Solve a QpProblem; optional ``warm_start=(x0, y0)`` from a prior solve."""
    settings = settings or QpSettings()
    n, m = prob.n, prob.m

    # Cost scaling keeps the iteration well-conditioned for badly scaled H.
    c_scale = max(float(np.max(np.abs(prob.h))) if n else 0.0,
                  float(np.max(np.abs(prob.g))) if n else 0.0, 1e-12)
    c = 1.0 / c_scale
    h_s = prob.h * c
    g_s = prob.g * c

    # Row equilibration of A; duals map back by y = r * y_int / c.
    if m:
        row_max = np.maximum(np.max(np.abs(prob.a), axis=1), 1e-10)
        r = np.clip(1.0 / row_max, 1e-4, 1e4)
        a_s = prob.a * r[:, None]
        l_s = np.where(np.isfinite(prob.l), prob.l * r, -np.inf)
        u_s = np.where(np.isfinite(prob.u), prob.u * r, np.inf)
        eq = (prob.u - prob.l) <= _EQ_TOL * (1.0 + np.abs(prob.u))
        rho = np.where(eq, settings.rho * 1e3, settings.rho)
    else:
        a_s = np.zeros((0, n))
        l_s = np.zeros(0)
        u_s = np.zeros(0)
        r = np.zeros(0)
        rho = np.zeros(0)

    def factor(rho_vec):
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = h_s + settings.sigma * np.eye(n)
        if m:
            kkt[:n, n:] = a_s.T
            kkt[n:, :n] = a_s
            kkt[n:, n:] = -np.diag(1.0 / rho_vec)
        return sla.lu_factor(kkt)

    lu = factor(rho)

    if warm_start is not None:
        x = np.asarray(warm_start[0], dtype=float).copy()
        y_ext = np.asarray(warm_start[1], dtype=float).copy()
        y = (y_ext * c) / r if m else np.zeros(0)
        z = np.clip(a_s @ x, l_s, u_s) if m else np.zeros(0)
    else:
        x = np.zeros(n)
        y = np.zeros(m)
        z = np.zeros(m)

    def external_y(y_int):
        return (r * y_int) / c if m else y_int

    alpha = settings.alpha
    rescaled = False
    status = MAX_ITER
    best = None
    iterations = 0
    y_prev_chk = y.copy()

    for it in range(1, settings.max_iter + 1):
        iterations = it
        rhs = np.concatenate([settings.sigma * x - g_s, z - y / rho]) if m else (settings.sigma * x - g_s)
        sol = sla.lu_solve(lu, rhs)
        x_t = sol[:n]
        if m:
            nu = sol[n:]
            z_t = z + (nu - y) / rho
            x = alpha * x_t + (1.0 - alpha) * x
            z_relax = alpha * z_t + (1.0 - alpha) * z
            z_new = np.clip(z_relax + y / rho, l_s, u_s)
            y = y + rho * (z_relax - z_new)
            z = z_new
        else:
            x = alpha * x_t + (1.0 - alpha) * x

        if it % settings.check_every == 0:
            y_e = external_y(y)
            r_prim, r_dual, p_sc, d_sc = _residuals(prob, x, y_e)
            eps_p = settings.eps_abs + settings.eps_rel * p_sc
            eps_d = settings.eps_abs + settings.eps_rel * d_sc
            if best is None or max(r_prim, r_dual) < max(best[2], best[3]):
                best = (x.copy(), y_e.copy(), r_prim, r_dual)
            if r_prim <= eps_p and r_dual <= eps_d:
                status = SOLVED
                break

        # Primal infeasibility certificate from the dual increments.
        if m and it % 25 == 0:
            dy = external_y(y) - external_y(y_prev_chk)
            y_prev_chk = y.copy()
            dy_norm = float(np.max(np.abs(dy))) if m else 0.0
            if dy_norm > settings.eps_pinf:
                at_dy = float(np.max(np.abs(prob.a.T @ dy)))
                pos = np.maximum(dy, 0.0)
                neg = np.minimum(dy, 0.0)
                support = 0.0
                certify = at_dy <= settings.eps_pinf * dy_norm
                for ui, pi in zip(prob.u, pos):
                    if pi > 0:
                        if np.isinf(ui):
                            certify = False
                            break
                        support += ui * pi
                if certify:
                    for li, ni in zip(prob.l, neg):
                        if ni < 0:
                            if np.isinf(li):
                                certify = False
                                break
                            support += li * ni
                if certify and support <= -settings.eps_pinf * dy_norm:
                    status = PRIMAL_INFEASIBLE
                    break

        # One-time penalty rescale when the residuals are badly out of balance.
        if m and not rescaled and it == 100:
            y_e = external_y(y)
            r_prim, r_dual, p_sc, d_sc = _residuals(prob, x, y_e)
            ratio = (r_prim / max(p_sc, 1e-12)) / max(r_dual / max(d_sc, 1e-12), 1e-16)
            if ratio > 10.0 or ratio < 0.1:
                rho = np.clip(rho * np.sqrt(ratio), 1e-6, 1e8)
                lu = factor(rho)
            rescaled = True

        # Early polish: terminate as soon as the refined iterate is optimal.
        if (
            settings.polish
            and status == MAX_ITER
            and settings.polish_every
            and it % settings.polish_every == 0
        ):
            polished = _polish(prob, x, external_y(y), settings)
            if polished is not None:
                xp, yp = polished
                r_prim, r_dual, p_sc, d_sc = _residuals(prob, xp, yp)
                if (
                    r_prim <= settings.eps_abs + settings.eps_rel * p_sc
                    and r_dual <= settings.eps_abs + settings.eps_rel * d_sc
                ):
                    return QpSolution(
                        x=xp, y=yp, status=SOLVED,
                        primal_residual=r_prim, dual_residual=r_dual,
                        iterations=it, objective=prob.objective(xp), polished=True,
                    )

    y_e = external_y(y)
    r_prim, r_dual, p_sc, d_sc = _residuals(prob, x, y_e)
    if best is not None and max(r_prim, r_dual) > max(best[2], best[3]):
        x, y_e, r_prim, r_dual = best

    polished = False
    if settings.polish and status != PRIMAL_INFEASIBLE:
        result = _polish(prob, x, y_e, settings)
        if result is not None:
            xp, yp = result
            rp, rd, *_ = _residuals(prob, xp, yp)
            if max(rp, rd) < max(r_prim, r_dual):
                x, y_e, r_prim, r_dual = xp, yp, rp, rd
                polished = True

    if status != PRIMAL_INFEASIBLE:
        eps_p = settings.eps_abs + settings.eps_rel * p_sc
        eps_d = settings.eps_abs + settings.eps_rel * d_sc
        status = SOLVED if (r_prim <= eps_p and r_dual <= eps_d) else MAX_ITER

    return QpSolution(
        x=x, y=y_e, status=status,
        primal_residual=r_prim, dual_residual=r_dual,
        iterations=iterations, objective=prob.objective(x), polished=polished,
    )
