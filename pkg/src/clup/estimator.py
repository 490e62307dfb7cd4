"""scikit-learn style wrapper around :func:`clup.engine.run_clup`.

Detection maps one observation ``(A, y)`` to a signal estimate, so ``fit``
takes the system matrix as ``X`` (rows are observations) and ``y`` as the
received vector.  After fitting, ``coef_`` holds the hard decisions in
``{-1/sqrt(n), 1/sqrt(n)}`` and ``predict`` returns ``X @ coef_``.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .engine import run_clup
from .model import R_PLT_DEFAULT, ClupConfig, FixedVector, RandomSign, SystemInstance


class ClupDetector(RegressorMixin, BaseEstimator):
    """CLuP detector for a single linear system.

    Parameters
    ----------
    r_plt, r_sc : float
        Radius ``r = r_sc * r_plt``; the ball used has radius ``r * sqrt(n)``.
    max_iters : int
    snr_db : float
        Only recorded in the fitted configuration; the detector itself
        depends on the noise level through ``r_plt``.
    x0 : array-like of shape (n,), optional
        Starting point.  Random signs derived from ``seed`` when omitted.
    inner_tol : float
    seed : int

    Attributes
    ----------
    coef_ : ndarray of shape (n,)
        Sign decisions scaled to unit norm.
    x_continuous_ : ndarray of shape (n,)
        The last relaxed iterate ``x^(k,s)``.
    run_ : ClupRun
    n_iter_ : int
    n_features_in_ : int
    """

    def __init__(self, r_plt=R_PLT_DEFAULT, r_sc=1.5, max_iters=10, snr_db=13.0, x0=None, inner_tol=1e-8, seed=0):
        self.r_plt = r_plt
        self.r_sc = r_sc
        self.max_iters = max_iters
        self.snr_db = snr_db
        self.x0 = x0
        self.inner_tol = inner_tol
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        n = X.shape[1]
        init = RandomSign() if self.x0 is None else FixedVector(self.x0)
        config = ClupConfig(r_plt=self.r_plt, r_sc=self.r_sc, max_iters=self.max_iters, snr_db=self.snr_db,
                            init=init, inner_tol=self.inner_tol, seed=self.seed)
        # x_sol is unknown here; a zero placeholder makes the error statistics
        # meaningless but leaves the iteration itself untouched
        inst = SystemInstance(A=X, x_sol=np.zeros(n), v=np.zeros(X.shape[0]), sigma=config.sigma, y=y,
                              alpha=X.shape[0] / n)
        self.run_ = run_clup(inst, config)
        self.x_continuous_ = self.run_.final.x_s
        self.coef_ = np.where(self.x_continuous_ < 0, -1.0, 1.0) / math.sqrt(n)
        self.n_iter_ = len(self.run_.records)
        self.n_features_in_ = n
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_

    def error_rate(self, x_sol) -> float:
        """Fraction of sign decisions that differ from ``x_sol``."""
        check_is_fitted(self, "coef_")
        return float(np.mean(np.sign(self.coef_) != np.sign(np.asarray(x_sol))))
