"""Second-iteration random-duality characterization.

Scaled coordinates follow :mod:`clup.rdt_first`.  The first iterate is
``x1s(h) = 1 - clip(-(h + nu1*sign0)/(2 gamma1), 0, 2)`` and the second
displacement is

    z2 = clip(-(hp + nu*x1s + nu2)/(2 gamma), 0, 2),   hp = p h + sqrt(1-p^2) h1

with ``h, h1`` independent standard normals and ``p`` the overlap of the two
dual (residual) directions.  The overlap of the two primal error vectors is

    q = (s3 - s2 + sigma^2) / (sqrt(c + sigma^2) sqrt(c1 + sigma^2))

with ``c = E z2^2``, ``s3 = E z2`` and ``s2 = E[x1s z2]``.

Solver
------
The attained objective is ``(d1 - s2)/sqrt(d2)``, so the program minimizes
``s2`` over displacement distributions subject to the level condition

    R = sqrt(alpha) sqrt(c + sigma^2) f_sph(p, q) + E[hp z2] = r

and maximizes the result over ``p``.  Stationarity of the Lagrangian in the
displacement gives the clamp above, with

    gamma = sqrt(alpha) (f - q f_q) / (2 sqrt(c + sigma^2))
    nu2   = sqrt(alpha) f_q / sqrt(c1 + sigma^2)

(``f_q = df_sph/dq``) and stationarity in ``p`` makes ``(p, sqrt(1-p^2))``
parallel to ``(sqrt(alpha) sqrt(c+sigma^2) q + E[h z2],
sqrt(alpha) sqrt(c+sigma^2) sqrt(1-q^2) + E[h1 z2])``.  These four equations
in ``(p, gamma, nu, nu2)`` are solved jointly; the dual objective ``xi`` then
equals ``r`` at the solution, which is checked.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq, root
from scipy.special import ndtr

from .exceptions import ConstraintViolation, DomainError, LevelSetMiss, QuadratureUnderResolved, SaddleNotConverged
from .gaussian import ClampMoments, GaussQuadrature2D, clamp_z, fbox, legendre_pieces, npdf
from .rdt_first import TheoryFirst
from .sph import f_sph2


@dataclass(frozen=True)
class TheorySecond:
    p_err2: float
    s_hat2: float
    d2_2: float
    d1_2: float
    nu2_vec: float
    nu2_lin: float
    gamma2: float
    p1: float
    q1: float
    c2z: float
    s2: float
    s3: float
    xi: float
    theory1: TheoryFirst

    def as_dict(self) -> dict:
        d = asdict(self)
        d["theory1"] = self.theory1.as_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def identity_quantities(self) -> tuple:
        """``(s2, s3, c2z, q1)`` recomputed from the critical values."""
        t1 = self.theory1
        s2 = t1.d1 + self.s_hat2 * math.sqrt(t1.d2)
        s3 = 1 - self.d1_2
        c2z = self.d2_2 - 2 * self.d1_2 + 1
        sig2 = t1.sigma**2
        q1 = (s3 - s2 + sig2) / (math.sqrt(c2z + sig2) * math.sqrt(t1.c1z_hat + sig2))
        return s2, s3, c2z, q1

    def table_rows(self) -> str:
        return (
            f"nu={self.nu2_vec:.4f} nu2={self.nu2_lin:.4f} gamma={self.gamma2:.4f} p1={self.p1:.4f} "
            f"s={self.s_hat2:.4f} | p_err={self.p_err2:.5f} d2={self.d2_2:.4f} d1={self.d1_2:.4f}\n"
            f"s2={self.s2:.6f} s3={self.s3:.4f} c2z={self.c2z:.4f} q1={self.q1:.4f}"
        )


# ---------------------------------------------------------------- pointwise


def x1s_of_h(h, nu1_hat, gamma1_hat, sign0):
    """Scaled first iterate ``1 - clip(-(h + nu1 sign0)/(2 gamma1), 0, 2)``."""
    return 1.0 - clamp_z(np.asarray(h) + nu1_hat * sign0, gamma1_hat)


def z2_of_h(hp, x1s, nu, nu2, gamma):
    """Scaled second displacement, in ``[0, 2]``."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    return clamp_z(np.asarray(hp) + nu * np.asarray(x1s) + nu2, gamma)


# ------------------------------------------------------------- integration


class SecondIntegrals:
    """Expectations over ``(sign0, h, h1)`` for fixed first-iteration data.

    The ``h1`` integral is done in closed form (the displacement depends on
    ``h1`` only through a Gaussian shift); the ``h`` integral uses
    Gauss-Legendre on pieces split at every kink of ``x1s`` and of the
    conditional mean.
    """

    def __init__(self, theory1: TheoryFirst, nodes: int = 64, cutoff: float = 10.0):
        self.t1 = theory1
        self.nodes = nodes
        self.cutoff = cutoff

    def refined(self) -> "SecondIntegrals":
        return SecondIntegrals(self.t1, 2 * self.nodes, self.cutoff)

    def _breaks(self, s0, p, gamma, nu, nu2):
        n1, g1 = self.t1.nu_hat, self.t1.gamma_hat
        b_hi = -n1 * s0
        b_lo = b_hi - 4 * g1
        br = [b_lo, b_hi]
        # conditional mean mu(h) is linear on each x1s piece
        pieces = [
            (-np.inf, b_lo, p, -nu + nu2),
            (b_lo, b_hi, p + nu / (2 * g1), nu * (1 + n1 * s0 / (2 * g1)) + nu2),
            (b_hi, np.inf, p, nu + nu2),
        ]
        if gamma > 0:
            for lo, hi, slope, icpt in pieces:
                if slope == 0:
                    continue
                for level in (0.0, -2 * gamma, -4 * gamma):
                    h = (level - icpt) / slope
                    if lo < h < hi:
                        br.append(h)
        return br

    def stats(self, p, gamma, nu, nu2) -> dict:
        """Return the expectations needed by the solver and the reports.

        Keys: ``z, z2, f, x1z, hz, h1z, err, cor, x1, x1sq``.
        """
        if abs(p) > 1:
            raise DomainError("p must lie in [-1, 1]")
        rho = self.t1.rho
        tau = math.sqrt(max(1 - p * p, 0.0))
        out = dict.fromkeys(("z", "z2", "f", "x1z", "hz", "h1z", "err", "cor", "x1", "x1sq"), 0.0)
        for s0, wt in ((1.0, rho), (-1.0, 1 - rho)):
            if wt == 0:
                continue
            h, w = legendre_pieces(self._breaks(s0, p, gamma, nu, nu2), self.nodes, self.cutoff)
            x1 = x1s_of_h(h, self.t1.nu_hat, self.t1.gamma_hat, s0)
            mu = p * h + nu * x1 + nu2
            if gamma > 0:
                m = ClampMoments(mu, tau, gamma)
                ez, ez2, ef, mid, err = m.z, m.z2, m.f, m.mid, m.err
            else:
                # concave in z: optimum at an endpoint
                if tau > 0:
                    thr = (-2 * gamma - mu) / tau
                    P2 = ndtr(thr)
                    ea = mu * P2 - tau * npdf(thr)
                else:
                    P2 = (mu < -2 * gamma).astype(float)
                    ea = mu * P2
                ez, ez2, ef, mid, err = 2 * P2, 4 * P2, 2 * ea + 4 * gamma * P2, 0 * mu, P2
            out["z"] += wt * (w @ ez)
            out["z2"] += wt * (w @ ez2)
            out["f"] += wt * (w @ ef)
            out["x1z"] += wt * (w @ (x1 * ez))
            out["hz"] += wt * (w @ (h * ez))
            # Gaussian integration by parts in h1: E[h1 z] = tau E[dz/da]
            dz = -mid / (2 * gamma) if gamma > 0 else 0 * mu
            out["h1z"] += wt * tau * (w @ dz)
            out["err"] += wt * (w @ err)
            out["x1"] += wt * (w @ x1)
            out["x1sq"] += wt * (w @ (x1 * x1))
        # x = 1 - z; sign(x) = +1 iff z < 1 so p_cor = 1 - P(z > 1)
        out["cor"] = 1.0 - out["err"]
        return {k: float(v) for k, v in out.items()}


def second_tensor_stats(theory1: TheoryFirst, p, gamma, nu, nu2, nodes: int = 200) -> dict:
    """Same expectations by a plain 2-D tensor Gauss-Hermite rule.

    Independent of :class:`SecondIntegrals`; used for the integral route of
    the derived quantities and as a cross-check.
    """
    quad = GaussQuadrature2D(nodes)
    rho = theory1.rho
    tau = math.sqrt(max(1 - p * p, 0.0))
    out = dict.fromkeys(("z", "z2", "f", "x1z", "err"), 0.0)
    for s0, wt in ((1.0, rho), (-1.0, 1 - rho)):
        x1 = x1s_of_h(quad.h, theory1.nu_hat, theory1.gamma_hat, s0)
        a = p * quad.h + tau * quad.h1 + nu * x1 + nu2
        z = clamp_z(a, gamma)
        W = quad.weights
        out["z"] += wt * (W @ z)
        out["z2"] += wt * (W @ (z * z))
        out["f"] += wt * (W @ fbox(a, gamma))
        out["x1z"] += wt * (W @ (x1 * z))
        # an indicator is too rough for a Hermite rule; integrate it over h1
        # in closed form first, leaving a smooth function of h
        mu = p * quad.h + nu * x1 + nu2
        pe = ndtr((-2 * gamma - mu) / tau) if tau > 0 else (mu < -2 * gamma).astype(float)
        out["err"] += wt * (W @ pe)
    return {k: float(v) for k, v in out.items()}


def second_samples(theory1: TheoryFirst, p, gamma, nu, nu2, h, h1, sign0):
    """Pointwise ``(x1s, a, z2)`` for Monte Carlo oracles."""
    x1 = x1s_of_h(h, theory1.nu_hat, theory1.gamma_hat, sign0)
    a = p * h + math.sqrt(1 - p * p) * h1 + nu * x1 + nu2
    return x1, a, clamp_z(a, gamma)


# --------------------------------------------------------------- objective


def xi_rd2(theory1: TheoryFirst, p1, q1, c2z, s2, s3, gamma, nu, nu2, nodes: int = 64, check: bool = True):
    """Second-iteration dual objective.

    Raises
    ------
    QuadratureUnderResolved
        If ``check`` and doubling the node count moves ``E fbox`` by more than
        ``1e-6``.
    """
    fs = f_sph2(p1, q1)
    Q = SecondIntegrals(theory1, nodes)
    ef = Q.stats(p1, gamma, nu, nu2)["f"]
    if check:
        ef2 = Q.refined().stats(p1, gamma, nu, nu2)["f"]
        if abs(ef2 - ef) > 1e-6:
            raise QuadratureUnderResolved(f"E fbox changed by {abs(ef2 - ef):.3g} under node doubling")
    a = theory1.alpha
    sig2 = theory1.sigma**2
    return math.sqrt(a) * math.sqrt(c2z + sig2) * fs + ef - nu * s2 - nu2 * s3 - gamma * c2z


# ------------------------------------------------------------------ solver


class _System:
    def __init__(self, theory1: TheoryFirst, integ: SecondIntegrals):
        self.t1 = theory1
        self.Q = integ
        self.sa = math.sqrt(theory1.alpha)
        self.sig2 = theory1.sigma**2
        self.den1 = math.sqrt(theory1.c1z_hat + self.sig2)

    def derived(self, p, gamma, nu, nu2):
        st = self.Q.stats(p, gamma, nu, nu2)
        c, s3, s2 = st["z2"], st["z"], st["x1z"]
        sc = math.sqrt(c + self.sig2)
        q = (s3 - s2 + self.sig2) / (sc * self.den1)
        q = min(max(q, -1 + 1e-15), 1 - 1e-15)
        sp = math.sqrt(max(1 - p * p, 0.0))
        sq = math.sqrt(1 - q * q)
        f = q * p + sq * sp
        fq = p - q * sp / sq
        R = self.sa * sc * f + p * st["hz"] + sp * st["h1z"]
        return st, c, s3, s2, q, f, fq, R, sc, sp, sq

    def residual(self, w):
        p, gamma, nu, nu2 = w
        if not (-1 < p < 1) or gamma <= 0:
            return np.full(4, 1e3)
        st, c, s3, s2, q, f, fq, R, sc, sp, sq = self.derived(p, gamma, nu, nu2)
        v0 = self.sa * sc * q + st["hz"]
        v1 = self.sa * sc * sq + st["h1z"]
        return np.array([
            R - self.t1.r,
            gamma - self.sa * (f - q * fq) / (2 * sc),
            nu2 - self.sa * fq / self.den1,
            p * v1 - sp * v0,
        ])

    def level_nu(self, p, gamma, nu2, nu0):
        """Solve ``R(nu) = r`` at fixed ``(p, gamma, nu2)`` by bracketing."""
        g = lambda v: self.derived(p, gamma, v, nu2)[7] - self.t1.r
        lo, hi = nu0 - 0.5, nu0 + 0.5
        glo, ghi = g(lo), g(hi)
        for _ in range(60):
            if glo * ghi < 0:
                return brentq(g, lo, hi, xtol=1e-13)
            lo, hi = lo - (hi - lo), hi + (hi - lo)
            glo, ghi = g(lo), g(hi)
        raise LevelSetMiss("level R = r not bracketed in nu")

    def fixed_point(self, p, gamma, nu, nu2, iters=200, damp=0.5, tol=1e-10):
        """Solve the three multiplier equations at fixed ``p``."""
        for _ in range(iters):
            nu = self.level_nu(p, gamma, nu2, nu)
            _, c, s3, s2, q, f, fq, R, sc, sp, sq = self.derived(p, gamma, nu, nu2)
            g_new = self.sa * (f - q * fq) / (2 * sc)
            n2_new = self.sa * fq / self.den1
            dg, dn = g_new - gamma, n2_new - nu2
            gamma += damp * dg
            nu2 += damp * dn
            if max(abs(dg), abs(dn)) < tol:
                break
        nu = self.level_nu(p, gamma, nu2, nu)
        return gamma, nu, nu2

    def s_star(self, p, start):
        """Attained ``s2`` at fixed ``p`` (profile used to maximize over ``p``)."""
        gamma, nu, nu2 = self.fixed_point(p, *start)
        st = self.Q.stats(p, gamma, nu, nu2)
        return st["x1z"], (gamma, nu, nu2)


def solve_second(theory1: TheoryFirst, nodes: int = 64, p_start: float = 0.7, tol: float = 1e-11) -> TheorySecond:
    """Second-iteration saddle point.

    Parameters
    ----------
    theory1 : TheoryFirst
        First-iteration solution at the same ``(alpha, sigma, rho, r)``.
    nodes : int
        Gauss-Legendre nodes per piece.
    p_start : float
        Starting dual overlap for the joint solve.

    Raises
    ------
    SaddleNotConverged, LevelSetMiss, ConstraintViolation
    """
    integ = SecondIntegrals(theory1, nodes)
    sys_ = _System(theory1, integ)
    # multipliers at fixed p first, then the joint system including p
    g0, n0, m0 = sys_.fixed_point(p_start, 2.0 * theory1.gamma_hat, 2.0 * theory1.nu_hat, 0.0)
    sol = root(sys_.residual, [p_start, g0, n0, m0], method="hybr", options={"xtol": tol})
    res = sys_.residual(sol.x)
    if not sol.success and np.max(np.abs(res)) > 1e-9:
        raise SaddleNotConverged(f"second-iteration system: {sol.message} (residual {res})")
    p, gamma, nu, nu2 = (float(t) for t in sol.x)
    st, c, s3, s2, q, f, fq, R, sc, sp, sq = sys_.derived(p, gamma, nu, nu2)
    xi = xi_rd2(theory1, p, q, c, s2, s3, gamma, nu, nu2, nodes, check=True)
    if abs(xi - theory1.r) > 1e-6:
        raise SaddleNotConverged(f"dual objective {xi:.8f} differs from r = {theory1.r}")
    s_hat = (s2 - theory1.d1) / math.sqrt(theory1.d2)
    d1 = 1 - s3
    d2 = c - 2 * s3 + 1
    out = TheorySecond(
        p_err2=st["err"], s_hat2=s_hat, d2_2=d2, d1_2=d1, nu2_vec=nu, nu2_lin=nu2, gamma2=gamma,
        p1=p, q1=q, c2z=c, s2=s2, s3=s3, xi=xi, theory1=theory1,
    )
    ident = out.identity_quantities()
    if max(abs(a - b) for a, b in zip(ident, (s2, s3, c, q))) > 1e-4:
        raise ConstraintViolation(f"constraint identities violated: {ident} vs {(s2, s3, c, q)}")
    for name, val, lo, hi in (("p_err", out.p_err2, 0, 1), ("q1", q, -1, 1), ("p1", p, -1, 1)):
        if not lo <= val <= hi:
            raise ConstraintViolation(f"{name} = {val} out of range")
    return out


def integral_route(t2: TheorySecond, nodes: int = 200) -> tuple:
    """``(s2, s3, c2z, q1)`` by direct 2-D quadrature at the reported multipliers."""
    t1 = t2.theory1
    st = second_tensor_stats(t1, t2.p1, t2.gamma2, t2.nu2_vec, t2.nu2_lin, nodes)
    sig2 = t1.sigma**2
    c, s3, s2 = st["z2"], st["z"], st["x1z"]
    q = (s3 - s2 + sig2) / (math.sqrt(c + sig2) * math.sqrt(t1.c1z_hat + sig2))
    return s2, s3, c, q


def profile_over_p(theory1: TheoryFirst, ps, nodes: int = 64):
    """Attained ``s2`` as a function of ``p`` (for verifying the maximization)."""
    integ = SecondIntegrals(theory1, nodes)
    sys_ = _System(theory1, integ)
    start = (2.0 * theory1.gamma_hat, 2.0 * theory1.nu_hat, 0.0)
    out = []
    for p in ps:
        s2, start = sys_.s_star(p, start)
        out.append(s2)
    return np.array(out)
