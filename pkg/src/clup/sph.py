"""Spherical overlap factor and its constructive lower bounds.

For unit vectors with Gram matrices ``Q`` (primal error directions) and ``P``
(dual residual directions), the factor multiplying ``sqrt(alpha) ||z||`` in
the level condition is bounded below by aligning the Gram-Schmidt
coordinates of the newest column in both systems:

    f >= <L_Q[-1], L_P[-1]>

where ``L`` is the lower Cholesky factor.  For two columns this is exactly
``q p + sqrt(1-q^2) sqrt(1-p^2)``.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import DomainError


def f_sph2(p: float, q: float) -> float:
    if abs(p) > 1 or abs(q) > 1:
        raise DomainError("overlaps must lie in [-1, 1]")
    return q * p + math.sqrt(1 - q * q) * math.sqrt(1 - p * p)


def _abc(M):
    A = M[0, 2]
    if abs(M[0, 1]) >= 1:
        raise DomainError("first overlap must be strictly inside (-1, 1)")
    B = (M[1, 2] - M[0, 2] * M[0, 1]) / math.sqrt(1 - M[0, 1] ** 2)
    rem = 1 - A * A - B * B
    if rem < -1e-10:
        raise DomainError(f"invalid correlation structure: 1 - A^2 - B^2 = {rem:.3g}")
    return A, B, math.sqrt(max(rem, 0.0))


def f_sph3_lower(P3, Q3) -> float:
    """Three-column bound ``A_q A_p + B_q B_p + C_q C_p``.

    ``A = M13``, ``B = (M23 - M13 M12)/sqrt(1 - M12^2)``,
    ``C = sqrt(1 - A^2 - B^2)`` for ``M`` in ``{P3, Q3}``.
    """
    P3 = np.asarray(P3, dtype=float)
    Q3 = np.asarray(Q3, dtype=float)
    if P3.shape != (3, 3) or Q3.shape != (3, 3):
        raise DomainError("need 3x3 matrices")
    Ap, Bp, Cp = _abc(P3)
    Aq, Bq, Cq = _abc(Q3)
    return Aq * Ap + Bq * Bp + Cq * Cp


def last_row(L_prev, row):
    """Cholesky last row ``(u, sqrt(1 - |u|^2))`` for a new unit column.

    ``L_prev`` is the lower factor of the existing Gram block and ``row`` the
    overlaps of the new column with the existing ones.
    """
    u = np.linalg.solve(L_prev, np.asarray(row, dtype=float)) if len(row) else np.zeros(0)
    rem = 1.0 - float(u @ u)
    if rem < -1e-10:
        raise DomainError(f"overlaps inconsistent with a unit column (1 - |u|^2 = {rem:.3g})")
    return np.append(u, math.sqrt(max(rem, 0.0)))


def f_sph_lower(P, Q) -> float:
    """Gram-Schmidt bound for ``k x k`` overlap matrices (newest column last)."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    k = P.shape[0]
    if k == 1:
        return 1.0
    Lp = np.linalg.cholesky(P[:-1, :-1])
    Lq = np.linalg.cholesky(Q[:-1, :-1])
    return float(last_row(Lq, Q[-1, :-1]) @ last_row(Lp, P[-1, :-1]))
