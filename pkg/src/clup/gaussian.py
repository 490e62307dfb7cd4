"""Gaussian expectations of the clamp ``z = clip(-a/(2 gamma), 0, 2)``.

Both theory modules need expectations of ``z``, ``z**2``, the box minimum
``fbox(a) = min_{0<=z<=2} (a z + gamma z**2)`` and sign events, where ``a`` is
an affine function of Gaussians.  For ``a ~ N(mu, tau**2)`` these follow from
truncated-normal moments; the helpers here are vectorized over ``mu``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

SQRT2PI = math.sqrt(2.0 * math.pi)


def npdf(x):
    return np.exp(-0.5 * np.square(x)) / SQRT2PI


def clamp_z(a, gamma):
    """Optimizer of ``a z + gamma z**2`` on ``[0, 2]``."""
    return np.clip(-np.asarray(a) / (2.0 * gamma), 0.0, 2.0)


def fbox(a, gamma):
    a = np.asarray(a, dtype=float)
    return np.where(a >= 0, 0.0, np.where(a <= -4 * gamma, 2 * a + 4 * gamma, -a * a / (4 * gamma)))


def _seg(alpha, beta):
    """Standardized truncated moments on ``(alpha, beta)``: ``M0, T1, T2``."""
    fa = npdf(alpha)
    fb = npdf(beta)
    M0 = ndtr(beta) - ndtr(alpha)
    T1 = fa - fb
    # alpha*phi(alpha) with the convention inf*0 = 0
    af = np.where(np.isfinite(alpha), alpha * fa, 0.0)
    bf = np.where(np.isfinite(beta), beta * fb, 0.0)
    T2 = M0 + af - bf
    return M0, T1, T2


class ClampMoments:
    """Expectations over ``a ~ N(mu, tau**2)`` of clamp-derived quantities.

    Attributes (arrays broadcast with ``mu``)
    ----------
    z, z2 : E[z], E[z**2]
    f : E[fbox(a)]
    mid : P(-4 gamma < a < 0), the probability of the linear branch
    low : P(a <= -4 gamma)
    err : P(a < -2 gamma), i.e. P(z > 1)
    """

    def __init__(self, mu, tau, gamma):
        mu = np.asarray(mu, dtype=float)
        g = float(gamma)
        if tau == 0.0:
            a = mu
            self.z = clamp_z(a, g)
            self.z2 = self.z**2
            self.f = fbox(a, g)
            self.mid = ((a > -4 * g) & (a < 0)).astype(float)
            self.low = (a <= -4 * g).astype(float)
            self.err = (a < -2 * g).astype(float)
            self.az_mid = np.where(self.mid > 0, a * a, 0.0)
            return
        lo = (-4 * g - mu) / tau
        hi = -mu / tau
        M0, T1, T2 = _seg(lo, hi)
        E1 = mu * M0 + tau * T1
        E2 = mu * mu * M0 + 2 * mu * tau * T1 + tau * tau * T2
        PL = ndtr(lo)
        # E[a; a < lo] = mu PL - tau phi(lo)
        EL = mu * PL - tau * npdf(lo)
        self.mid = M0
        self.low = PL
        self.z = 2 * PL - E1 / (2 * g)
        self.z2 = 4 * PL + E2 / (4 * g * g)
        self.f = 2 * EL + 4 * g * PL - E2 / (4 * g)
        self.err = ndtr((-2 * g - mu) / tau)
        self.az_mid = E2


def legendre_pieces(breaks, nodes: int, cutoff: float = 10.0):
    """Gauss-Legendre rule for ``E[g(h)]``, ``h ~ N(0,1)``, split at ``breaks``.

    Returns nodes ``h`` and weights ``w`` (the normal density is folded into
    ``w``).  The range is truncated to ``[-cutoff, cutoff]``.
    """
    pts = sorted({-cutoff, cutoff, *(float(b) for b in breaks if -cutoff < b < cutoff)})
    t, wt = leggauss(nodes)
    hs, ws = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        if b - a <= 0:
            continue
        h = 0.5 * (b - a) * t + 0.5 * (a + b)
        hs.append(h)
        ws.append(0.5 * (b - a) * wt * npdf(h))
    return np.concatenate(hs), np.concatenate(ws)


class GaussQuadrature2D:
    """Tensor Gauss-Hermite rule for ``E f(h, h1)`` with ``h, h1`` i.i.d. N(0,1).

    Parameters
    ----------
    node_count : int
        Nodes per axis.

    Attributes
    ----------
    h, h1 : ndarray of shape (node_count**2,)
    weights : ndarray
        Sum to one.
    """

    def __init__(self, node_count: int = 64):
        x, w = hermegauss(node_count)
        w = w / w.sum()
        self.node_count = node_count
        H, H1 = np.meshgrid(x, x, indexing="ij")
        self.h = H.ravel()
        self.h1 = H1.ravel()
        self.weights = np.outer(w, w).ravel()

    def expect(self, f):
        return float(np.dot(self.weights, f(self.h, self.h1)))

    def refined(self) -> "GaussQuadrature2D":
        return GaussQuadrature2D(2 * self.node_count)


def mc_mean(fn, n_samples: int = 10**7, dim: int = 1, seed: int = 12345, chunk: int = 10**6):
    """Monte Carlo mean and standard error of ``fn`` over standard normals.

    ``fn`` receives ``dim`` arrays of equal length and returns values (or a
    tuple of value arrays, in which case tuples of estimates are returned).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    s1 = s2 = None
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        args = [rng.standard_normal(k) for _ in range(dim)]
        vals = fn(*args)
        vals = np.atleast_2d(np.asarray(vals, dtype=float))
        if s1 is None:
            s1 = vals.sum(axis=1)
            s2 = (vals**2).sum(axis=1)
        else:
            s1 += vals.sum(axis=1)
            s2 += (vals**2).sum(axis=1)
        done += k
    mean = s1 / n_samples
    se = np.sqrt(np.maximum(s2 / n_samples - mean**2, 0.0) / (n_samples - 1))
    if mean.size == 1:
        return float(mean[0]), float(se[0])
    return mean, se
