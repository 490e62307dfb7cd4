"""First-iteration random-duality characterization.

Coordinates are scaled by ``sqrt(n)`` and sign-aligned with ``x_sol`` so that
the first iterate is ``x = 1 - z`` with ``z`` in ``[0, 2]``.  The initial
point has a fraction ``rho`` of coordinates agreeing with ``x_sol``
(``sign0 = +1``).  With ``h ~ N(0, 1)`` the optimizing displacement is the
clamp ``z = clip(-(h + nu*sign0)/(2 gamma), 0, 2)`` and

    xi(c, s1, gamma, nu) = sqrt(alpha) sqrt(c + sigma^2) + E fbox - nu s1 - gamma c

where ``fbox = min_{0<=z<=2} ((h + nu sign0) z + gamma z^2)``.  The reported
``s1`` is negative (it is ``E[sign0 z]``); the detector's attained objective
is ``-s1`` when ``rho = 0.5``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize, root
from math import erfc as erfc_s

from scipy.special import erf, erfc

from .exceptions import DomainError, RadiusUnreachable, SaddleNotConverged
from .gaussian import ClampMoments

logger = logging.getLogger(__name__)

_SQ2 = math.sqrt(2.0)
_SQ2PI = math.sqrt(2.0 * math.pi)
_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class FirstIterParams:
    alpha: float
    sigma: float
    rho: float = 0.5
    r: float = 0.1594

    def __post_init__(self):
        if self.alpha <= 0 or self.sigma < 0 or self.r <= 0 or not 0 <= self.rho <= 1:
            raise DomainError(f"invalid parameters {self}")

    @classmethod
    def from_snr(cls, alpha, snr_db, rho=0.5, r=0.1594):
        return cls(alpha, 10.0 ** (-snr_db / 20.0), rho, r)


@dataclass(frozen=True)
class TheoryFirst:
    nu_hat: float
    gamma_hat: float
    c1z_hat: float
    s1_hat: float
    xi: float
    p_err: float
    d1: float
    d2: float
    s_hat: float
    alpha: float
    sigma: float
    rho: float
    r: float

    @property
    def params(self) -> FirstIterParams:
        return FirstIterParams(self.alpha, self.sigma, self.rho, self.r)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def table_row(self) -> str:
        snr = -20 * math.log10(self.sigma) if self.sigma > 0 else math.inf
        return (
            f"{snr:6.2f} | nu={self.nu_hat:.4f} gamma={self.gamma_hat:.4f} c1z={self.c1z_hat:.4f} "
            f"s1={self.s1_hat:.4f} xi={self.xi:.4f} | p_err={self.p_err:.4f} d2={self.d2:.4f} d1={self.d1:.4f}"
        )


def _check_gamma(gamma):
    if not np.all(np.asarray(gamma) > 0):
        raise DomainError("gamma must be positive")


def I11(gamma, nu):
    """Linear-branch part of ``E fbox`` for ``a = h + nu``: ``E[-a^2/(4 gamma); -4 gamma < a < 0]``."""
    _check_gamma(gamma)
    g, v = gamma, nu
    num = (
        np.exp(-0.5 * (4 * g + v) ** 2) * (v - 4 * g)
        + math.sqrt(math.pi / 2) * (v * v + 1) * erf(2 * _SQ2 * g + v / _SQ2)
        - math.sqrt(math.pi / 2) * (v * v + 1) * erf(v / _SQ2)
        - np.exp(-0.5 * v * v) * v
    )
    return -num / (4 * _SQ2PI * g)


def I21(gamma, nu):
    """Saturated-branch part: ``E[2a + 4 gamma; a < -4 gamma]`` for ``a = h + nu``."""
    _check_gamma(gamma)
    g, v = gamma, nu
    return (4 * g + 2 * v) * 0.5 * erfc((4 * g + v) / _SQ2) - 2 * np.exp(-((4 * g + v) ** 2) / 2) / _SQ2PI


def e_fbox1(gamma, nu, rho):
    return rho * (I11(gamma, nu) + I21(gamma, nu)) + (1 - rho) * (I11(gamma, -nu) + I21(gamma, -nu))


def xi_rd1(p: FirstIterParams, c1z, s1, gamma, nu):
    """Evaluate the first-iteration dual objective."""
    _check_gamma(gamma)
    if c1z < 0:
        raise DomainError("c1z must be nonnegative")
    return (
        math.sqrt(p.alpha) * math.sqrt(c1z + p.sigma**2)
        + e_fbox1(gamma, nu, p.rho)
        - nu * s1
        - gamma * c1z
    )


def _s_x1(g, v):
    return -v / 2 / g * (0.5 * erfc(v / _SQ2) - 0.5 * erfc((v + 4 * g) / _SQ2)) + 1 / 2 / g / _SQ2PI * (
        np.exp(-v * v / 2) - np.exp(-((4 * g + v) ** 2) / 2)
    )


def _s_x2(g, v):
    return erfc((4 * g + v) / _SQ2)


def zhat_quantiles(gamma, nu, rho):
    """Return ``(E z, E z^2, p_err)`` in ``sqrt(n)``-scaled units."""
    _check_gamma(gamma)
    ez = rho * (_s_x1(gamma, nu) + _s_x2(gamma, nu)) + (1 - rho) * (_s_x1(gamma, -nu) + _s_x2(gamma, -nu))
    ez2 = rho * (-I11(gamma, nu) / gamma + 2 * _s_x2(gamma, nu)) + (1 - rho) * (
        -I11(gamma, -nu) / gamma + 2 * _s_x2(gamma, -nu)
    )
    p_cor = rho * 0.5 * erfc((-2 * gamma - nu) / _SQ2) + (1 - rho) * 0.5 * erfc((-2 * gamma + nu) / _SQ2)
    return float(ez), float(ez2), float(1 - p_cor)


# -------------------------------------------------------------- derivatives


def _moments(gamma, nu, rho):
    """Per-branch clamp moments for the two initial signs."""
    mp = ClampMoments(nu, 1.0, gamma)
    mm = ClampMoments(-nu, 1.0, gamma)
    return mp, mm


def _clamp_scalar(mu, g):
    """Scalar version of :class:`ClampMoments` for ``a ~ N(mu, 1)``.

    Returns ``(E z, E z^2, E fbox, P(mid), E[a; mid], E[a^2; mid], P(low))``.
    """
    lo = -4 * g - mu
    hi = -mu
    pa = math.exp(-0.5 * lo * lo) / _SQ2PI
    pb = math.exp(-0.5 * hi * hi) / _SQ2PI
    PL = 0.5 * erfc_s(-lo / _SQ2)
    M0 = 0.5 * erfc_s(-hi / _SQ2) - PL
    T1 = pa - pb
    T2 = M0 + lo * pa - hi * pb
    E1 = mu * M0 + T1
    E2 = mu * mu * M0 + 2 * mu * T1 + T2
    EL = mu * PL - pa
    z = 2 * PL - E1 / (2 * g)
    z2 = 4 * PL + E2 / (4 * g * g)
    f = 2 * EL + 4 * g * PL - E2 / (4 * g)
    return z, z2, f, M0, E1, E2, PL


def xi_grad_hess(p: FirstIterParams, c1z, s1, gamma, nu):
    """Value, gradient and Hessian of ``xi`` in ``(gamma, nu)``."""
    rho = p.rho
    g = gamma
    zp, z2p, fp, mp, e1p, e2p, _ = _clamp_scalar(nu, g)
    zm, z2m, fm, mm, e1m, e2m, _ = _clamp_scalar(-nu, g)
    val = math.sqrt(p.alpha) * math.sqrt(c1z + p.sigma**2) + rho * fp + (1 - rho) * fm - nu * s1 - g * c1z
    grad = np.array([rho * z2p + (1 - rho) * z2m - c1z, rho * zp - (1 - rho) * zm - s1])
    hgg = -(rho * e2p + (1 - rho) * e2m) / (2 * g**3)
    hgv = (rho * e1p - (1 - rho) * e1m) / (2 * g * g)
    hvv = -(rho * mp + (1 - rho) * mm) / (2 * g)
    H = np.array([[hgg, hgv], [hgv, hvv]])
    return val, grad, H


def _at_zero_gamma(g, grad):
    return g < 1e-7 and grad[0] < 0


def _inner_max(p, c1z, s1, start, tol=1e-11, max_iter=200):
    """Maximize the concave ``xi`` over ``(gamma, nu)``.

    Returns ``(value, gamma, nu, ok)``; ``value = inf`` signals an unbounded
    supremum (the pair ``(c1z, s1)`` is not attainable).
    """
    g, v = start
    val, grad, H = xi_grad_hess(p, c1z, s1, g, v)
    for _ in range(max_iter):
        if np.max(np.abs(grad)) <= tol:
            return val, g, v, True
        lam = 0.0
        while True:
            Hr = H - lam * np.eye(2)
            try:
                step = -np.linalg.solve(Hr, grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)) and grad @ step > 0:
                break
            lam = max(1e-12, 10 * lam) if lam else 1e-10 * (1 + np.abs(H).max())
            if lam > 1e12:
                step = grad.copy()
                break
        t = 1.0
        while True:
            gn, vn = g + t * step[0], v + t * step[1]
            if gn > 0:
                valn, gradn, Hn = xi_grad_hess(p, c1z, s1, gn, vn)
                if valn >= val - 1e-15 * (1 + abs(val)):
                    break
            t *= 0.5
            if t < 1e-20:
                return val, g, v, np.max(np.abs(grad)) <= 1e-8 or _at_zero_gamma(g, grad)
        g, v, val, grad, H = gn, vn, valn, gradn, Hn
        if _at_zero_gamma(g, grad) and abs(grad[1]) <= 1e-6:
            # supremum on the gamma = 0 face: c exceeds every attainable E z^2
            return val, g, v, True
        if abs(v) > 1e4 or val > 1e4:
            return math.inf, g, v, True
        if g > 1e8:
            return val, g, v, True
    return val, g, v, False


def _inner_max_nm(p, c1z, s1, start):
    def neg(w):
        return -xi_rd1(p, c1z, s1, math.exp(w[0]), w[1])

    res = minimize(neg, [math.log(start[0]), start[1]], method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
    return -res.fun, math.exp(res.x[0]), res.x[1], bool(res.success)


class _Saddle:
    """``F(s1) = min_c max_{gamma,nu} xi`` with warm-started inner solves."""

    def __init__(self, p: FirstIterParams):
        self.p = p
        self.start = (1.0, 0.0)
        self.last = None

    def G(self, c1z, s1):
        val, g, v, ok = _inner_max(self.p, c1z, s1, self.start)
        if not ok:
            val2, g2, v2, ok2 = _inner_max_nm(self.p, c1z, s1, self.start)
            if not ok2 and not math.isfinite(val):
                raise SaddleNotConverged(f"inner maximization failed at c={c1z}, s1={s1}")
            val, g, v = val2, g2, v2
        if math.isfinite(val) and abs(v) < 50 and 1e-6 < g < 1e3:
            self.start = (g, v)
        return val, g, v

    def F(self, s1, tol=1e-11):
        a, b = 1e-12, 4.0
        x1 = b - _GOLD * (b - a)
        x2 = a + _GOLD * (b - a)
        f1 = self.G(x1, s1)
        f2 = self.G(x2, s1)
        while b - a > tol:
            if f1[0] < f2[0]:
                b, x2, f2 = x2, x1, f1
                x1 = b - _GOLD * (b - a)
                f1 = self.G(x1, s1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + _GOLD * (b - a)
                f2 = self.G(x2, s1)
        c, best = (x1, f1) if f1[0] < f2[0] else (x2, f2)
        self.last = (c, best[1], best[2])
        return best[0]


def plateau(p: FirstIterParams):
    """Smallest attainable first-iteration residual level.

    Returns ``(r_min, s1_at_min)``: with ``nu = 0`` the inner problem has no
    objective pull and the level is the min-max over ``(c, gamma)``.
    """
    sq = math.sqrt(p.alpha)

    def G(c):
        # stationarity in gamma: E z^2(gamma) = c, solved by bisection in log gamma
        lo, hi = -20.0, 20.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            m = ClampMoments(0.0, 1.0, math.exp(mid))
            if m.z2 > c:
                lo = mid
            else:
                hi = mid
        g = math.exp(0.5 * (lo + hi))
        m = ClampMoments(0.0, 1.0, g)
        return sq * math.sqrt(c + p.sigma**2) + float(m.f) - g * c, g

    a, b = 1e-12, 4.0
    for _ in range(120):
        x1 = b - _GOLD * (b - a)
        x2 = a + _GOLD * (b - a)
        if G(x1)[0] < G(x2)[0]:
            b = x2
        else:
            a = x1
    c = 0.5 * (a + b)
    val, g = G(c)
    ez = float(ClampMoments(0.0, 1.0, g).z)
    return val, (2 * p.rho - 1) * ez


def solve_first(p: FirstIterParams, root_tol: float = 1e-10) -> TheoryFirst:
    """Minimal ``s1`` with ``F(s1) = r``, plus the derived statistics.

    Raises
    ------
    RadiusUnreachable
        If ``r`` is below the plateau level.
    SaddleNotConverged
        If the inner or outer loops fail.
    """
    r_min, s_top = plateau(p)
    if p.r < r_min - 1e-12:
        raise RadiusUnreachable(f"r={p.r:.6g} is below the plateau level {r_min:.6g}")
    sad = _Saddle(p)
    # grow the bracket downward from the plateau point
    hi = s_top
    step = 0.05
    lo = hi - step
    grid = [(hi, r_min)]
    while True:
        f_lo = sad.F(lo)
        grid.append((lo, f_lo))
        if f_lo > p.r:
            break
        hi = lo
        step *= 2
        lo = max(lo - step, -2.0 * p.rho - 1e-9)
        if len(grid) > 40:
            raise RadiusUnreachable(f"no root of F(s1) = {p.r} found")
    vals = [v for _, v in grid]
    if any(b_ < a_ - 1e-9 for a_, b_ in zip(vals[:-1], vals[1:]) if math.isfinite(b_)):
        raise SaddleNotConverged("F(s1) is not monotone on the root bracket")
    for _ in range(200):
        if hi - lo <= root_tol:
            break
        mid = 0.5 * (lo + hi)
        if sad.F(mid) > p.r:
            lo = mid
        else:
            hi = mid
    s1 = hi
    xi = sad.F(s1)
    c, g, v = sad.last
    if abs(xi - p.r) > 1e-7:
        raise SaddleNotConverged(f"level F(s1) - r = {xi - p.r:.3g}")
    _, grad, _ = xi_grad_hess(p, c, s1, g, v)
    if np.max(np.abs(grad)) > 1e-8:
        raise SaddleNotConverged(f"stationarity residual {grad}")
    ez, ez2, p_err = zhat_quantiles(g, v, p.rho)
    d1 = 1.0 - ez
    d2 = ez2 + 2 * d1 - 1
    return TheoryFirst(
        nu_hat=float(v), gamma_hat=float(g), c1z_hat=float(c), s1_hat=float(s1), xi=float(xi),
        p_err=p_err, d1=float(d1), d2=float(d2), s_hat=float(s1),
        alpha=p.alpha, sigma=p.sigma, rho=p.rho, r=p.r,
    )


def solve_first_foc(p: FirstIterParams, start=(1.0, 0.5)):
    """Independent route through the first-order conditions.

    At the optimum ``gamma = sqrt(alpha) / (2 sqrt(c + sigma^2))`` with
    ``c = E z^2`` and the level ``sqrt(alpha) sqrt(c + sigma^2) + E[h z] = r``,
    where ``E[h z] = -P(linear branch)/(2 gamma)`` by Gaussian integration by
    parts.  Returns ``(gamma, nu, c, s1)``.
    """
    sq = math.sqrt(p.alpha)

    def eqs(w):
        g, v = w
        if g <= 0:
            return [1e3, 1e3]
        mp, mm = _moments(g, v, p.rho)
        c = p.rho * mp.z2 + (1 - p.rho) * mm.z2
        ehz = -(p.rho * mp.mid + (1 - p.rho) * mm.mid) / (2 * g)
        return [g - sq / (2 * math.sqrt(c + p.sigma**2)), sq * math.sqrt(c + p.sigma**2) + ehz - p.r]

    sol = root(eqs, start, method="hybr", options={"xtol": 1e-14})
    if not sol.success:
        raise SaddleNotConverged(sol.message)
    g, v = sol.x
    mp, mm = _moments(g, v, p.rho)
    c = float(p.rho * mp.z2 + (1 - p.rho) * mm.z2)
    s1 = float(p.rho * mp.z - (1 - p.rho) * mm.z)
    return float(g), float(v), c, s1
