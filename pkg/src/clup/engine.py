"""The CLuP iteration and its per-iteration statistics."""

from __future__ import annotations

import csv
import enum
import io
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InfeasibleRadius, InvalidDimension, NoConvergence
from .inner import InnerProblem, solve_inner
from .model import ClupConfig, SystemInstance, make_initial

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ("run_id", "k", "p_err", "s_hat", "d2", "d1", "residual", "kkt_gap", "inner_iters")


class Termination(enum.Enum):
    MAX_ITERS = "MaxIters"
    CONVERGED = "Converged"
    INFEASIBLE_RADIUS = "InfeasibleRadius"


@dataclass
class IterationRecord:
    """Statistics of iteration ``k``.

    ``s_hat`` is the attained objective ``x_prev^T x_s`` (the tables' ``-s``).
    """

    k: int
    x_s: np.ndarray
    x_unit: np.ndarray
    p_err: float
    s_hat: float
    d2: float
    d1: float
    residual_norm: float
    kkt_gap: float
    inner_iters: int = 0
    residual_dir: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ClupRun:
    records: list
    config: ClupConfig
    terminated_reason: Termination
    delta: float | None = None
    run_id: int = 0

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    def table(self) -> np.ndarray:
        """Array of shape (k, 4) with columns ``p_err, s_hat, d2, d1``."""
        return np.array([[r.p_err, r.s_hat, r.d2, r.d1] for r in self.records])


def stats_from_vector(x_s, x_prev, x_sol) -> tuple:
    """Return ``(p_err, s_hat, d2, d1)`` for a solution vector.

    A zero component of ``x_s`` counts as a sign error.
    """
    x_s = np.asarray(x_s, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    x_sol = np.asarray(x_sol, dtype=float)
    if not (x_s.shape == x_prev.shape == x_sol.shape):
        raise InvalidDimension("vectors must have equal length")
    agree = np.sign(x_s) == np.sign(x_sol)
    p_err = float(np.count_nonzero(~agree)) / x_s.size
    return p_err, float(x_prev @ x_s), float(x_s @ x_s), float(x_sol @ x_s)


def run_clup(instance: SystemInstance, config: ClupConfig, run_id: int = 0, keep_residuals: bool = False) -> ClupRun:
    """Run the detector on one instance.

    Parameters
    ----------
    instance : SystemInstance
    config : ClupConfig
    run_id : int
        Label carried into the CSV rows.
    keep_residuals : bool
        Store the unit residual direction of each iterate (used for overlap
        estimation).

    Raises
    ------
    InfeasibleRadius
        At the first iteration, if the radius is below the minimal residual.
    NoConvergence
        From the inner solver; ``partial`` holds the run so far.
    """
    n = instance.n
    x_prev = make_initial(config, instance)
    prob = InnerProblem(x_prev, instance.A, instance.y, config.ball_radius(n))
    records = []
    warm = None
    reason, delta = Termination.MAX_ITERS, None
    for k in range(1, config.max_iters + 1):
        p = prob.with_c(x_prev)
        try:
            sol = solve_inner(p, config.inner_tol, method=config.inner_method, warm_start=warm)
        except InfeasibleRadius as exc:
            if not records:
                raise
            exc.partial = ClupRun(records, config, Termination.INFEASIBLE_RADIUS, run_id=run_id)
            raise
        except NoConvergence as exc:
            exc.partial = ClupRun(records, config, Termination.MAX_ITERS, run_id=run_id)
            raise
        x_s = sol.x_star
        p_err, s_hat, d2, d1 = stats_from_vector(x_s, x_prev, instance.x_sol)
        res_dir = None
        if keep_residuals:
            res = instance.y - instance.A @ x_s
            res_dir = res / np.linalg.norm(res)
        x_unit = x_s / math.sqrt(d2)
        records.append(
            IterationRecord(k, x_s, x_unit, p_err, s_hat, d2, d1, sol.residual_norm, sol.kkt_gap, sol.iterations_used, res_dir)
        )
        if config.warm_start:
            warm = x_s
        x_prev = x_unit
        if config.convergence_tol is not None and k > 1:
            delta = abs(records[-1].s_hat - records[-2].s_hat)
            if delta < config.convergence_tol:
                reason = Termination.CONVERGED
                break
    return ClupRun(records, config, reason, delta, run_id)


def records_to_csv(runs, fh=None) -> str:
    """Per-iteration rows with the header :data:`RECORD_COLUMNS`."""
    buf = fh if fh is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for run in runs:
        for r in run.records:
            w.writerow([run.run_id, r.k, repr(r.p_err), repr(r.s_hat), repr(r.d2), repr(r.d1),
                        repr(r.residual_norm), repr(r.kkt_gap), r.inner_iters])
    return buf.getvalue() if fh is None else ""


def ml_exhaustive(A, y, chunk: int = 1 << 14) -> np.ndarray:
    """Exact ML detection by enumerating ``{-1/sqrt(n), 1/sqrt(n)}^n``.

    Only practical for ``n`` up to about 20.  Ties go to the first candidate
    in binary counting order.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    n = A.shape[1]
    if n > 24:
        raise InvalidDimension(f"exhaustive search over 2^{n} points refused")
    best, best_val = None, np.inf
    bits = np.arange(n)
    total = 1 << n
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        X = np.where((idx[:, None] >> bits) & 1, 1.0, -1.0) / math.sqrt(n)
        vals = np.sum((y[None, :] - X @ A.T) ** 2, axis=1)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best = vals[j], X[j].copy()
    return best


def ml_error_rate(instance: SystemInstance) -> float:
    x_ml = ml_exhaustive(instance.A, instance.y)
    return float(np.mean(np.sign(x_ml) != np.sign(instance.x_sol)))
