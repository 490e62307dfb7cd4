"""Iterations three and beyond through the random dual at large sample size.

The first two iterations are fixed by :mod:`clup.rdt_first` and
:mod:`clup.rdt_second`.  Each further iteration ``k+1`` is realized on
``n_dual`` sampled coordinates.  With ``W`` the matrix of i.i.d. standard
normal streams and ``ell`` the new row of the Cholesky factor of ``P`` (so
that ``W @ ell`` is the new dual stream), the displacement is the clamp

    z = clip(-(W ell + sum_j nut_j x_j + nu2) / (2 gamma), 0, 2)

and the multipliers solve the first-order system obtained from the level
condition ``R = sqrt(alpha) sqrt(c + sigma^2) f + E[(W ell) z] = r``, with
``f`` the Gram-Schmidt lower bound of :mod:`clup.sph` computed from the
current ``P`` and ``Q`` rows:

    K_j   = sqrt(alpha) df/dQ_j / sqrt(c_j + sigma^2)
    gamma = sqrt(alpha) (f - sum_j Q_j df/dQ_j) / (2 sqrt(c + sigma^2))
    nu2   = sum_j K_j,   nut_j = -K_j (j < k),   nut_k from R = r
    ell   = v / |v|,     v = sqrt(alpha) sqrt(c + sigma^2) ell_Q + E[W z]

The system is solved by damped fixed-point iteration with the ``P`` and ``Q``
rows re-estimated from the realized coordinates at every step.  All sample
averages use the same draws (common random numbers), so the iteration is
deterministic for a seed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .exceptions import CovarianceNotPSD, InsufficientRuns, InvalidDimension, LevelSetMiss, SaddleNotConverged
from .gaussian import clamp_z
from .model import substream
from .rdt_first import TheoryFirst
from .rdt_second import TheorySecond
from .sph import f_sph2, f_sph3_lower, f_sph_lower, last_row

logger = logging.getLogger(__name__)

__all__ = [
    "OverlapMatrices", "RandomDualState", "RandomDualEstimate", "run_random_dual", "measure_overlaps",
    "repair_psd", "f_sph2", "f_sph3_lower", "f_sph_lower",
]


def repair_psd(M, floor: float = 1e-12):
    """Clip eigenvalues at ``floor`` and rescale to unit diagonal."""
    M = 0.5 * (np.asarray(M, dtype=float) + np.asarray(M, dtype=float).T)
    w, V = np.linalg.eigh(M)
    R = (V * np.maximum(w, floor)) @ V.T
    d = np.sqrt(np.diag(R))
    R = R / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    return 0.5 * (R + R.T)


@dataclass
class OverlapMatrices:
    """Gram matrices of the unit dual (``P``) and primal-error (``Q``) directions."""

    P: np.ndarray
    Q: np.ndarray

    def check(self, tol: float = 1e-10) -> None:
        for name, M in (("P", self.P), ("Q", self.Q)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise CovarianceNotPSD(f"{name} is not symmetric")
            if not np.allclose(np.diag(M), 1.0, atol=1e-12):
                raise CovarianceNotPSD(f"{name} lacks a unit diagonal")
            if np.min(np.linalg.eigvalsh(M)) < -tol:
                raise CovarianceNotPSD(f"{name} has eigenvalue {np.min(np.linalg.eigvalsh(M)):.3g}")

    def to_dict(self) -> dict:
        return {"P": self.P.tolist(), "Q": self.Q.tolist()}


@dataclass
class RandomDualState:
    n_dual: int
    W: np.ndarray
    L_P: np.ndarray
    L_Q: np.ndarray
    x_histories: np.ndarray
    sign0: np.ndarray
    multipliers: list = field(default_factory=list)

    @property
    def h_streams(self) -> np.ndarray:
        """Correlated dual streams, one column per iteration."""
        k = self.L_P.shape[0]
        return self.W[:, :k] @ self.L_P.T


@dataclass
class RandomDualEstimate:
    """Per-iteration characterization for iterations ``1..k_max``.

    ``s_hat`` uses the theory sign (negative); the attained objective is
    ``-s_hat``.  Entries for iterations 1 and 2 are the theory values, later
    ones come from the sampled random dual.
    """

    d1: np.ndarray
    d2: np.ndarray
    p_err: np.ndarray
    s_hat: np.ndarray
    overlaps: OverlapMatrices
    state: RandomDualState = field(repr=False)
    f_sph: np.ndarray = None
    params: dict = field(default_factory=dict)

    def rows(self):
        for k in range(len(self.d1)):
            yield {"k": k + 1, "p_err": float(self.p_err[k]), "neg_s_hat": float(-self.s_hat[k]),
                   "d2": float(self.d2[k]), "d1": float(self.d1[k])}

    def to_json(self) -> str:
        return json.dumps({"params": self.params, "iterations": list(self.rows()), **self.overlaps.to_dict(),
                           "f_sph": [float(t) for t in self.f_sph], "multipliers": self.state.multipliers}, indent=2)


class _Iteration:
    """Sample averages for the next iteration given the history."""

    def __init__(self, st: RandomDualState, c_hist, alpha, sigma, r):
        self.st = st
        self.k = st.x_histories.shape[1]
        self.Wk = st.W[:, : self.k + 1]
        self.X = st.x_histories
        self.c_hist = np.asarray(c_hist)
        self.sa = math.sqrt(alpha)
        self.sig2 = sigma**2
        self.r = r
        self.den = np.sqrt(self.c_hist + self.sig2)

    def evaluate(self, ell, gamma, nut, nu2):
        hp = self.Wk @ ell
        a = hp + self.X @ nut + nu2
        z = clamp_z(a, gamma)
        c = float(np.mean(z * z))
        s3 = float(np.mean(z))
        s2 = self.X.T @ z / z.size
        sc = math.sqrt(c + self.sig2)
        qrow = (s3 - s2 + self.sig2) / (sc * self.den)
        u = np.linalg.solve(self.st.L_Q, qrow)
        rem = 1.0 - float(u @ u)
        if rem <= 0:
            return None
        lq = np.append(u, math.sqrt(rem))
        f = float(lq @ ell)
        R = self.sa * sc * f + float(hp @ z) / z.size
        return dict(z=z, c=c, s3=s3, s2=s2, sc=sc, q=qrow, lq=lq, u=u, f=f, R=R)

    def level(self, ell, gamma, nut, nu2, guess):
        def g(v):
            nt = nut.copy()
            nt[-1] = v
            out = self.evaluate(ell, gamma, nt, nu2)
            return math.inf if out is None else out["R"] - self.r

        # R need not be monotone in the level multiplier: walk outward on both
        # sides and take the sign change closest to the guess
        g0 = g(guess)
        if g0 == 0:
            return guess
        left = right = (guess, g0)
        step = 0.05
        for _ in range(80):
            for side in (-1, 1):
                x_old, g_old = left if side < 0 else right
                x_new = x_old + side * step
                g_new = g(x_new)
                if np.isfinite(g_old) and np.isfinite(g_new) and g_old * g_new <= 0:
                    a, b = sorted((x_old, x_new))
                    return brentq(g, a, b, xtol=1e-12)
                if side < 0:
                    left = (x_new, g_new)
                else:
                    right = (x_new, g_new)
            step *= 1.25
        raise LevelSetMiss("level condition xi = r not bracketed")

    def updates(self, ell, ev):
        k = self.k
        u, lq = ev["u"], ev["lq"]
        dfdu = ell[:k] - u * ell[k] / lq[k]
        fq = np.linalg.solve(self.st.L_Q.T, dfdu)
        K = self.sa * fq / self.den
        gamma = self.sa * (ev["f"] - float(fq @ ev["q"])) / (2 * ev["sc"])
        v = self.sa * ev["sc"] * lq + self.Wk.T @ ev["z"] / ev["z"].size
        return gamma, -K, float(K.sum()), v / np.linalg.norm(v)


def _initial_state(t1: TheoryFirst, t2: TheorySecond, k_max, n_dual, seed):
    rng = substream(seed, 7)
    # column j is the same stream whatever k_max is
    W = rng.standard_normal((k_max, n_dual)).T
    n_pos = int(round(t1.rho * n_dual))
    sign0 = np.where(np.arange(n_dual) < n_pos, 1.0, -1.0)
    x1 = 1.0 - clamp_z(W[:, 0] + t1.nu_hat * sign0, t1.gamma_hat)
    p = t2.p1
    hp = p * W[:, 0] + math.sqrt(1 - p * p) * W[:, 1]
    x2 = 1.0 - clamp_z(hp + t2.nu2_vec * x1 + t2.nu2_lin, t2.gamma2)
    L_P = np.array([[1.0, 0.0], [p, math.sqrt(1 - p * p)]])
    sig2 = t1.sigma**2
    z1, z2 = 1 - x1, 1 - x2
    c1, c2 = float(np.mean(z1 * z1)), float(np.mean(z2 * z2))
    q = (float(np.mean(z1 * z2)) + sig2) / math.sqrt((c1 + sig2) * (c2 + sig2))
    L_Q = np.array([[1.0, 0.0], [q, math.sqrt(1 - q * q)]])
    st = RandomDualState(n_dual, W, L_P, L_Q, np.column_stack([x1, x2]), sign0,
                         [{"k": 1, "gamma": t1.gamma_hat, "nu": [t1.nu_hat], "nu2": 0.0},
                          {"k": 2, "gamma": t2.gamma2, "nu": [t2.nu2_vec], "nu2": t2.nu2_lin}])
    return st, [c1, c2]


def run_random_dual(theory1: TheoryFirst, theory2: TheorySecond, k_max: int = 5, n_dual: int = 10**5,
                    seed: int = 0, damping: float = 0.5, tol: float = 1e-9, max_iter: int = 5000,
                    max_step: float = 0.1) -> RandomDualEstimate:
    """Realize iterations ``3..k_max`` on ``n_dual`` coordinates.

    Raises
    ------
    CovarianceNotPSD
        If an overlap row cannot be completed to a valid Gram matrix.
    LevelSetMiss
        If ``xi = r`` cannot be met.
    SaddleNotConverged
        If the fixed-point iteration does not settle.
    """
    if k_max < 3:
        raise InvalidDimension("k_max must be at least 3")
    t1, t2 = theory1, theory2
    st, c_hist = _initial_state(t1, t2, k_max, n_dual, seed)
    d1 = [t1.d1, t2.d1_2]
    d2 = [t1.d2, t2.d2_2]
    p_err = [t1.p_err, t2.p_err2]
    s_hat = [t1.s_hat, t2.s_hat2]
    fs = [1.0, f_sph2(t2.p1, t2.q1)]
    prev = st.multipliers[-1]
    gamma, nu_prev, nu2 = prev["gamma"], prev["nu"][-1], prev["nu2"]
    for k in range(2, k_max):
        it = _Iteration(st, c_hist, t1.alpha, t1.sigma, t1.r)
        # consecutive dual rows align more and more closely; start the new row
        # just past the last measured overlap so the continuation branch is found
        Pk = st.L_P @ st.L_P.T
        rho0 = max(0.99, 1.0 - 0.5 * (1.0 - float(Pk[-1, -2])))
        ell = np.append(rho0 * st.L_P[-1], math.sqrt(1 - rho0**2))
        nut = np.zeros(k)
        nut[-1] = nu_prev
        converged = False
        for _ in range(max_iter):
            nut[-1] = it.level(ell, gamma, nut, nu2, nut[-1])
            ev = it.evaluate(ell, gamma, nut, nu2)
            g_new, nut_new, nu2_new, ell_new = it.updates(ell, ev)
            delta = max(abs(g_new - gamma), abs(nu2_new - nu2), float(np.max(np.abs(nut_new[:-1] - nut[:-1]), initial=0.0)),
                        float(np.max(np.abs(ell_new - ell))))
            # the bound f is stiff near 1, so cap the step to stay on the
            # branch continued from the previous iteration
            scale = damping * min(1.0, max_step / max(delta, 1e-300))
            gamma += scale * (g_new - gamma)
            nu2 += scale * (nu2_new - nu2)
            nut[:-1] += scale * (nut_new[:-1] - nut[:-1])
            ell = ell + scale * (ell_new - ell)
            ell /= np.linalg.norm(ell)
            if delta < tol:
                converged = True
                break
        if not converged:
            raise SaddleNotConverged(f"iteration {k + 1}: fixed point not reached (last change {delta:.3g})")
        nut[-1] = it.level(ell, gamma, nut, nu2, nut[-1])
        ev = it.evaluate(ell, gamma, nut, nu2)
        z = ev["z"]
        x_new = 1.0 - z
        x_prev = st.x_histories[:, -1]
        s_hat.append((float(ev["s2"][-1]) - float(np.mean(x_prev))) / math.sqrt(float(np.mean(x_prev**2))))
        d1.append(float(np.mean(x_new)))
        d2.append(float(np.mean(x_new**2)))
        p_err.append(float(np.mean(z > 1)))
        fs.append(ev["f"])
        c_hist.append(ev["c"])
        kk = k + 1
        L_P = np.zeros((kk, kk))
        L_P[:k, :k] = st.L_P
        L_P[k] = ell
        L_Q = np.zeros((kk, kk))
        L_Q[:k, :k] = st.L_Q
        L_Q[k] = ev["lq"]
        st.L_P, st.L_Q = L_P, L_Q
        st.x_histories = np.column_stack([st.x_histories, x_new])
        st.multipliers.append({"k": kk, "gamma": float(gamma), "nu": [float(t) for t in nut], "nu2": float(nu2)})
        gamma, nu_prev = float(gamma), float(nut[-1])
        logger.info("random dual iteration %d: d1=%.5f d2=%.5f p_err=%.2e", kk, d1[-1], d2[-1], p_err[-1])
    P = st.L_P @ st.L_P.T
    Q = st.L_Q @ st.L_Q.T
    ov = OverlapMatrices(0.5 * (P + P.T), 0.5 * (Q + Q.T))
    np.fill_diagonal(ov.P, 1.0)
    np.fill_diagonal(ov.Q, 1.0)
    try:
        ov.check()
    except CovarianceNotPSD:
        ov = OverlapMatrices(repair_psd(ov.P), repair_psd(ov.Q))
        ov.check()
    params = {"alpha": t1.alpha, "sigma": t1.sigma, "rho": t1.rho, "r": t1.r, "n_dual": n_dual, "seed": seed}
    return RandomDualEstimate(np.array(d1), np.array(d2), np.array(p_err), np.array(s_hat), ov, st, np.array(fs), params)


def measure_overlaps(runs, instances):
    """Average overlap matrices over simulated runs.

    Parameters
    ----------
    runs : sequence of ClupRun
        Runs made with ``keep_residuals=True`` and equal iteration counts.
    instances : sequence of SystemInstance
        The matching instances.

    Returns
    -------
    overlaps : OverlapMatrices
    d1, d2 : ndarray
        Per-iteration means.

    Raises
    ------
    InsufficientRuns
        With fewer than ten runs.
    """
    runs = list(runs)
    instances = list(instances)
    if len(runs) < 10:
        raise InsufficientRuns(f"{len(runs)} runs; at least 10 are needed")
    if len(runs) != len(instances):
        raise InvalidDimension("runs and instances must pair up")
    k = len(runs[0].records)
    P = np.zeros((k, k))
    Q = np.zeros((k, k))
    d1 = np.zeros(k)
    d2 = np.zeros(k)
    for run, inst in zip(runs, instances):
        if len(run.records) != k:
            raise InvalidDimension("runs differ in iteration count")
        Z = np.array([np.append(inst.x_sol - r.x_s, inst.sigma) for r in run.records]).T
        Z /= np.linalg.norm(Z, axis=0)
        Q += Z.T @ Z
        Lam = np.array([r.residual_dir for r in run.records]).T
        if Lam.dtype == object:
            raise InvalidDimension("runs lack residual directions (use keep_residuals=True)")
        P += Lam.T @ Lam
        d1 += [r.d1 for r in run.records]
        d2 += [r.d2 for r in run.records]
    n = len(runs)
    ov = OverlapMatrices(P / n, Q / n)
    for M in (ov.P, ov.Q):
        M[:] = 0.5 * (M + M.T)
        np.fill_diagonal(M, 1.0)
    ov.check()
    return ov, d1 / n, d2 / n
