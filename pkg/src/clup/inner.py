"""Per-iteration convex program of the detector.

    maximize    c^T x
    subject to  ||y - A x||_2 <= r,   |x_i| <= b   (b = 1/sqrt(n))

Two solvers are provided.

``method="ipm"`` (default)
    A primal-dual interior-point method on the smooth reformulation with the
    ball written as ``(||y - Ax||^2 - r^2)/2 <= 0``, followed by an active-set
    polish that solves the KKT system exactly on the identified free set.
    A warm start skips the interior-point phase whenever the polish started
    from a previous solution's active set already certifies optimality.

``method="bisection"``
    Bisection on the ball multiplier; each Lagrangian subproblem is a box
    constrained quadratic solved by accelerated projected gradient.  Only
    matrix-vector products are needed.  The final point is polished the same
    way, so both methods return KKT points to roundoff.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.optimize import lsq_linear, minimize_scalar

from .exceptions import InfeasibleRadius, InvalidDimension, NoConvergence

logger = logging.getLogger(__name__)


@dataclass
class InnerProblem:
    """Data of one inner solve.

    Attributes
    ----------
    c : ndarray of shape (n,)
    A : ndarray of shape (m, n)
    y : ndarray of shape (m,)
    r : float
        Ball radius in the same units as ``||y - A x||``.
    box_half_width : float, optional
        Defaults to ``1/sqrt(n)``.
    """

    c: np.ndarray
    A: np.ndarray
    y: np.ndarray
    r: float
    box_half_width: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        m, n = self.A.shape
        if self.c.shape != (n,) or self.y.shape != (m,):
            raise InvalidDimension(f"inconsistent shapes A{self.A.shape}, c{self.c.shape}, y{self.y.shape}")
        if not self.r > 0:
            raise InvalidDimension("r must be positive")
        if self.box_half_width is None:
            self.box_half_width = 1.0 / math.sqrt(n)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def with_c(self, c) -> "InnerProblem":
        """Same instance, new direction; shares the cached Gram data."""
        return InnerProblem(c, self.A, self.y, self.r, self.box_half_width, self._cache)

    @property
    def gram(self) -> np.ndarray:
        if "G" not in self._cache:
            self._cache["G"] = self.A.T @ self.A
        return self._cache["G"]

    @property
    def aty(self) -> np.ndarray:
        if "aty" not in self._cache:
            self._cache["aty"] = self.A.T @ self.y
        return self._cache["aty"]

    @property
    def lipschitz(self) -> float:
        """Largest squared singular value of ``A`` by power iteration."""
        if "L" not in self._cache:
            self._cache["L"] = spectral_norm_sq(self.A)
        return self._cache["L"]

    @property
    def min_residual(self):
        if "rho" not in self._cache:
            self._cache["rho"] = min_residual(self.A, self.y, self.box_half_width)
        return self._cache["rho"]


@dataclass
class InnerSolution:
    x_star: np.ndarray
    objective: float
    residual_norm: float
    kkt_gap: float
    iterations_used: int
    ball_multiplier: float = 0.0
    method: str = ""


def spectral_norm_sq(A, rtol=1e-6, max_iter=1000) -> float:
    """Power iteration on ``A^T A`` with a deterministic start."""
    n = A.shape[1]
    v = np.ones(n) / math.sqrt(n)
    lam = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0.0:
            return 0.0
        v = w / lam_new
        if abs(lam_new - lam) <= rtol * lam_new:
            break
        lam = lam_new
    # power iteration underestimates; pad by the tolerance
    return lam_new * (1.0 + 10 * rtol)


def min_residual(A, y, box) -> tuple:
    """Smallest residual over the box, ``min ||y - A x||`` with ``|x_i| <= box``.

    Returns
    -------
    x_ls : ndarray
    rho_min : float
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    n = A.shape[1]
    if not np.any(y):
        return np.zeros(n), 0.0
    method = "bvls" if n <= 400 else "trf"
    res = lsq_linear(A, y, bounds=(-box, box), method=method, tol=1e-12, lsmr_tol="auto", max_iter=None)
    x = np.clip(res.x, -box, box)
    return x, float(np.linalg.norm(y - A @ x))


def kkt_certificate(p: InnerProblem, x, gamma=None) -> float:
    """Stationarity plus complementary-slackness residual at ``x``.

    For ``gamma >= 0`` let ``g = -c + gamma * d||y - Ax||`` be the gradient of
    the Lagrangian of ``min -c^T x``.  The returned value is the minimum over
    ``gamma`` of ``||x - clip(x - g)|| + gamma * | ||y-Ax|| - r |`` which is zero
    exactly at KKT points.  If ``gamma`` is given, only that value is tried.
    """
    x = np.asarray(x, dtype=float)
    b = p.box_half_width
    res = p.y - p.A @ x
    nr = float(np.linalg.norm(res))
    gb = -(p.A.T @ res) / nr if nr > 0 else np.zeros_like(x)

    def gap(g_):
        grad = -p.c + g_ * gb
        return float(np.linalg.norm(x - np.clip(x - grad, -b, b))) + g_ * abs(nr - p.r)

    if gamma is not None:
        return gap(max(float(gamma), 0.0))
    cands = [0.0]
    free = np.abs(x) < b * (1 - 1e-9)
    if nr > 0 and np.any(free):
        gf = gb[free]
        den = float(gf @ gf)
        if den > 0:
            cands.append(max(float(p.c[free] @ gf) / den, 0.0))
    best = min(gap(g_) for g_ in cands)
    if best > 1e-13 and nr > 0:
        # the objective is convex in gamma (norm of affine/ramp pieces plus a
        # linear term), so a bounded scalar search finds the global minimum
        hi = 10.0 * (1.0 + max(cands)) * (1.0 + float(np.linalg.norm(p.c)) / max(float(np.linalg.norm(gb)), 1e-300))
        opt = minimize_scalar(gap, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-12 * hi})
        best = min(best, float(opt.fun))
    return best


# ------------------------------------------------------------------ helpers


def _vertex(c, b):
    return np.sign(c) * b


def _polish(p: InnerProblem, upper, lower, max_rounds=50):
    """Exact KKT solve for a guessed active set, refined by swapping.

    ``upper``/``lower`` are boolean masks of coordinates fixed at ``+b``/``-b``.
    The ball is assumed active.  Returns ``(x, gamma, rounds)`` or ``None``.
    """
    b = p.box_half_width
    c, A, y, r = p.c, p.A, p.y, p.r
    G = p.gram
    upper = upper.copy()
    lower = lower.copy()
    seen = set()
    for rounds in range(1, max_rounds + 1):
        key = (upper.tobytes(), lower.tobytes())
        if key in seen:
            return None
        seen.add(key)
        free = ~(upper | lower)
        xb = np.where(upper, b, np.where(lower, -b, 0.0))
        F = np.flatnonzero(free)
        if F.size == 0:
            x = xb
            res = y - A @ x
            nr = float(np.linalg.norm(res))
            if nr > r * (1 + 1e-12):
                return None
            # pure vertex: gamma from the face multipliers is any feasible value
            return x, 0.0, rounds
        yp = y - A @ xb
        try:
            fac = cho_factor(G[np.ix_(F, F)], lower=False, check_finite=False)
        except LinAlgError:
            return None
        x_ls = cho_solve(fac, A[:, F].T @ yp, check_finite=False)
        u = cho_solve(fac, c[F], check_finite=False)
        rho2 = float(np.sum((yp - A[:, F] @ x_ls) ** 2))
        cu = float(c[F] @ u)
        if rho2 > r * r or cu <= 0:
            return None
        kappa = math.sqrt((r * r - rho2) / cu)
        x = xb.copy()
        x[F] = x_ls + kappa * u
        mu = 1.0 / (2.0 * kappa)
        res = y - A @ x
        grad = -c - 2.0 * mu * (A.T @ res)
        tol_b = b * 1e-12
        viol_u = free & (x > b + tol_b)
        viol_l = free & (x < -b - tol_b)
        wrong_u = upper & (grad > 1e-14)
        wrong_l = lower & (grad < -1e-14)
        if not (viol_u.any() or viol_l.any() or wrong_u.any() or wrong_l.any()):
            x = np.clip(x, -b, b)
            return x, 2.0 * mu * r, rounds
        upper = (upper & ~wrong_u) | viol_u
        lower = (lower & ~wrong_l) | viol_l
    return None


def _ipm(p: InnerProblem, x0, tol, max_iter=200, state=None):
    """Primal-dual interior-point method.

    Stops once the dual residual and the surrogate duality gap are below
    ``tol`` (relative to ``1 + ||c||``) or when the gap stalls.  Returns
    ``(x, lam_u, lam_l, lam_f, iters)``; the tuple minus ``iters`` can be fed
    back as ``state`` to tighten further.
    """
    b = p.box_half_width
    c, A, y, r = p.c, p.A, p.y, p.r
    G = p.gram
    aty = p.aty
    n = p.n
    mcon = 2 * n + 1
    x = x0.copy()

    def fval(x_):
        res = y - A @ x_
        return 0.5 * (float(res @ res) - r * r)

    su, sl, sf = b - x, b + x, -fval(x)
    if su.min() <= 0 or sl.min() <= 0 or sf <= 0:
        raise ValueError("interior-point start is not strictly feasible")
    if state is None:
        lam_u = np.full(n, 1.0 / n)
        lam_l = np.full(n, 1.0 / n)
        # balance the objective against the ball gradient in the dual residual
        gf0 = float(np.linalg.norm(G @ x - aty))
        lam_f = float(np.linalg.norm(c)) / gf0 if gf0 > 0 else 1.0 / max(sf, 1e-12)
    else:
        x, lam_u, lam_l, lam_f = state
        su, sl, sf = b - x, b + x, -fval(x)
    mu_fac = 10.0
    scale = 1.0 + float(np.linalg.norm(c))
    etas = []
    for it in range(1, max_iter + 1):
        gf = G @ x - aty
        r_dual = -c + lam_u - lam_l + lam_f * gf
        eta = float(su @ lam_u + sl @ lam_l + sf * lam_f)
        etas.append(eta)
        if np.linalg.norm(r_dual) <= tol * scale and eta <= tol * scale:
            return x, lam_u, lam_l, lam_f, it
        if len(etas) > 8 and eta > 0.5 * etas[-8]:
            logger.debug("interior-point gap stalled at %.3g after %d iterations", eta, it)
            return x, lam_u, lam_l, lam_f, it
        t = mu_fac * mcon / eta
        D = lam_u / su + lam_l / sl
        M = lam_f * G
        M[np.diag_indices(n)] += D
        w = lam_f / sf
        rhs = c - (1.0 / t) * (1.0 / su - 1.0 / sl + gf / sf)
        try:
            fac = cho_factor(M, lower=False, check_finite=False)
        except LinAlgError:
            M[np.diag_indices(n)] += 1e-12 * (1 + np.abs(np.diag(M)))
            fac = cho_factor(M, lower=False, check_finite=False)
        z1 = cho_solve(fac, rhs, check_finite=False)
        z2 = cho_solve(fac, gf, check_finite=False)
        dx = z1 - (w * float(gf @ z1) / (1.0 + w * float(gf @ z2))) * z2
        gdx = float(gf @ dx)
        dlu = -lam_u + (1.0 / t + lam_u * dx) / su
        dll = -lam_l + (1.0 / t - lam_l * dx) / sl
        dlf = -lam_f + (1.0 / t + lam_f * gdx) / sf

        smax = 1.0
        for lam, dlam in ((lam_u, dlu), (lam_l, dll)):
            neg = dlam < 0
            if neg.any():
                smax = min(smax, float(np.min(-lam[neg] / dlam[neg])))
        if dlf < 0:
            smax = min(smax, -lam_f / dlf)
        s = 0.99 * smax

        def resid_norm(x_, lu, ll, lf):
            su_, sl_, sf_ = b - x_, b + x_, -fval(x_)
            gf_ = G @ x_ - aty
            rd = -c + lu - ll + lf * gf_
            rc = np.concatenate([lu * su_ - 1 / t, ll * sl_ - 1 / t, [lf * sf_ - 1 / t]])
            return math.sqrt(float(rd @ rd + rc @ rc))

        r0 = resid_norm(x, lam_u, lam_l, lam_f)
        for _ in range(60):
            xn = x + s * dx
            if (b - xn).min() > 0 and (b + xn).min() > 0 and fval(xn) < 0:
                break
            s *= 0.5
        for _ in range(60):
            xn = x + s * dx
            if resid_norm(xn, lam_u + s * dlu, lam_l + s * dll, lam_f + s * dlf) <= (1 - 0.01 * s) * r0:
                break
            s *= 0.5
        x = x + s * dx
        lam_u = lam_u + s * dlu
        lam_l = lam_l + s * dll
        lam_f = lam_f + s * dlf
        su, sl, sf = b - x, b + x, -fval(x)
    return x, lam_u, lam_l, lam_f, max_iter


def _descend_residual(p: InnerProblem, target, iters=3000, shrink=1e-6):
    b = p.box_half_width * (1 - shrink)
    L = p.lipschitz
    x = np.zeros(p.n)
    z = x.copy()
    t = 1.0
    for _ in range(iters):
        res = p.y - p.A @ z
        xn = np.clip(z + (p.A.T @ res) / L, -b, b)
        if np.linalg.norm(p.y - p.A @ xn) < target:
            return xn
        tn = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        z = xn + ((t - 1) / tn) * (xn - x)
        x, t = xn, tn
    return None


def _interior_start(p: InnerProblem):
    b = p.box_half_width
    r = p.r
    if "rho" not in p._cache:
        # accelerated projected gradient on the residual, stopped as soon as
        # a strictly interior point appears
        if "x_int" not in p._cache:
            p._cache["x_int"] = _descend_residual(p, r * (1 - 1e-3))
        x = p._cache["x_int"]
        if x is not None and np.linalg.norm(p.y - p.A @ x) < r * (1 - 1e-9):
            return x
    x_ls, rho = p.min_residual
    # shrink toward 0 along the line to leave both constraints strictly
    x = np.clip(x_ls, -b * (1 - 1e-6), b * (1 - 1e-6))
    for theta in (1.0, 0.999, 0.99, 0.9, 0.5):
        xt = theta * x
        if np.linalg.norm(p.y - p.A @ xt) < r:
            return xt
    raise InfeasibleRadius(r, rho)


def _apg_box_qp(p: InnerProblem, mu, x0, iters=2000, tol=1e-13):
    """min_x -c^T x + mu ||y - A x||^2 over the box by FISTA with restarts."""
    b = p.box_half_width
    L = 2.0 * mu * p.lipschitz
    if L == 0:
        return _vertex(p.c, b), 0
    x = x0.copy()
    z = x.copy()
    t = 1.0
    obj = lambda x_: -p.c @ x_ + mu * float(np.sum((p.y - p.A @ x_) ** 2))
    f_prev = obj(x)
    for k in range(1, iters + 1):
        grad = -p.c - 2.0 * mu * (p.A.T @ (p.y - p.A @ z))
        xn = np.clip(z - grad / L, -b, b)
        fn = obj(xn)
        if fn > f_prev:  # adaptive restart keeps the recorded objective monotone
            t = 1.0
            z = x.copy()
            continue
        tn = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        z = xn + ((t - 1) / tn) * (xn - x)
        step = np.linalg.norm(xn - x)
        x, t, f_prev = xn, tn, fn
        if step <= tol * b:
            return x, k
    return x, iters


def _bisection(p: InnerProblem, tol, max_bisect=200):
    b = p.box_half_width
    r = p.r

    def resid(x_):
        return float(np.linalg.norm(p.y - p.A @ x_))

    x = _vertex(p.c, b)
    lo, hi = 0.0, 1.0
    x_hi, it_total = None, 0
    while True:
        x_hi, k = _apg_box_qp(p, hi, x)
        it_total += k
        if resid(x_hi) <= r:
            break
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            raise NoConvergence("bisection bracket did not close", it_total)
    x_mid = x_hi
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        x_mid, k = _apg_box_qp(p, mid, x_mid)
        it_total += k
        rm = resid(x_mid)
        if abs(rm - r) <= tol * r:
            break
        if rm > r:
            lo = mid
        else:
            hi, x_hi = mid, x_mid
        if hi - lo <= 1e-15 * hi:
            break
    return x_mid, it_total


def solve_inner(p: InnerProblem, tol: float = 1e-8, method: str = "ipm", warm_start=None) -> InnerSolution:
    """Solve the inner program.

    Parameters
    ----------
    p : InnerProblem
    tol : float
        Required KKT certificate value.
    method : {"ipm", "bisection"}
    warm_start : ndarray, optional
        A previous solution; its active box faces seed the polish step.

    Raises
    ------
    InfeasibleRadius
        If ``r`` is below the minimal residual over the box.
    NoConvergence
        If no point meeting ``tol`` was found.
    """
    b = p.box_half_width
    # ball inactive at the box vertex: done
    xv = _vertex(p.c, b)
    rv = float(np.linalg.norm(p.y - p.A @ xv))
    if rv <= p.r:
        gap = kkt_certificate(p, xv, gamma=0.0)
        return InnerSolution(xv, float(p.c @ xv), rv, gap, 0, 0.0, "vertex")

    def finish(x, gamma, iters, how):
        x = np.clip(x, -b, b)
        rn = float(np.linalg.norm(p.y - p.A @ x))
        gap = kkt_certificate(p, x, gamma)
        if gamma is not None:
            gap = min(gap, kkt_certificate(p, x))
        return InnerSolution(x, float(p.c @ x), rn, gap, iters, float(gamma or 0.0), how)

    iters = 0
    if warm_start is not None:
        w = np.asarray(warm_start, dtype=float)
        out = _polish(p, w >= b * (1 - 1e-9), w <= -b * (1 - 1e-9))
        if out is not None:
            sol = finish(out[0], out[1], out[2], "warm-polish")
            if sol.kkt_gap <= tol and sol.residual_norm <= p.r * (1 + 1e-8):
                return sol
            iters += out[2]

    if method == "ipm":
        try:
            x0 = _interior_start(p)
        except InfeasibleRadius:
            x_ls, rho = p.min_residual
            if p.r < rho - tol * max(1.0, rho):
                raise
            # radius equals the minimal residual up to tolerance
            sol = finish(x_ls, None, iters, "min-residual")
            if sol.kkt_gap <= tol:
                return sol
            raise NoConvergence("radius at the feasibility threshold", iters, sol) from None
        state = None
        for eps in (1e-3, 1e-6, 1e-9, 1e-12):
            x, lam_u, lam_l, lam_f, k = _ipm(p, x0, eps, state=state)
            state = (x, lam_u, lam_l, lam_f)
            iters += k
            out = _polish(p, lam_u > (b - x), lam_l > (b + x))
            if out is not None:
                sol = finish(out[0], out[1], iters + out[2], "ipm+polish")
                if sol.kkt_gap <= tol and sol.residual_norm <= p.r * (1 + 1e-8):
                    return sol
        upper = lam_u > (b - x)
        lower = lam_l > (b + x)
        gamma_ipm = lam_f * float(np.linalg.norm(p.y - p.A @ x))
    elif method == "bisection":
        x_ls, rho = p.min_residual
        if p.r < rho - tol * max(1.0, rho):
            raise InfeasibleRadius(p.r, rho)
        x, k = _bisection(p, tol)
        iters += k
        upper = x >= b * (1 - 1e-9)
        lower = x <= -b * (1 - 1e-9)
        gamma_ipm = None
    else:
        raise ValueError(f"unknown method {method!r}")

    out = _polish(p, upper, lower)
    if out is not None:
        sol = finish(out[0], out[1], iters + out[2], method + "+polish")
        if sol.kkt_gap <= tol and sol.residual_norm <= p.r * (1 + 1e-8):
            return sol
    sol = finish(x, gamma_ipm, iters, method)
    if sol.kkt_gap <= tol and sol.residual_norm <= p.r * (1 + 1e-8):
        return sol
    if method == "ipm":
        # the interior-point phase can stall when the feasible set is a thin
        # sliver along the box; bisection only needs projections
        logger.debug("interior-point solve uncertified (gap %.3g), retrying by bisection", sol.kkt_gap)
        try:
            alt = solve_inner(p, tol, method="bisection")
        except NoConvergence:
            alt = None
        if alt is not None:
            alt.iterations_used += iters
            return alt
    raise NoConvergence(f"inner solve ended with kkt_gap {sol.kkt_gap:.3g} > {tol:.3g}", iters, sol)
