"""Seeded Monte Carlo replication and theory-versus-simulation comparison.

Replication ``i`` at dimension ``n`` draws its instance from the key
``(seed, i)`` and its random start from ``(seed, i)`` as well (different child
streams, see :mod:`clup.model`).  Results are gathered in replication order,
so output files do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .engine import RECORD_COLUMNS, ClupRun, records_to_csv, run_clup
from .exceptions import ClupError, InvalidConfig, KeyMismatch
from .model import ClupConfig, SystemInstance, config_as_dict, generate_instance
from .random_dual import RandomDualEstimate
from .rdt_first import TheoryFirst
from .rdt_second import TheorySecond

logger = logging.getLogger(__name__)

WORKERS_ENV = "CLUP_WORKERS"
STATS = ("p_err", "neg_s_hat", "d2", "d1")
FAILURE_LIMIT = 0.01


def default_workers() -> int:
    """Worker count from ``$CLUP_WORKERS`` (1 when unset)."""
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        w = int(raw)
    except ValueError as exc:
        raise InvalidConfig(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, w)


class Mode(enum.Enum):
    SIMULATE = "simulate"
    THEORY_FIRST = "theory-first"
    THEORY_SECOND = "theory-second"
    RANDOM_DUAL = "random-dual"
    COMPARE = "compare"


@dataclass
class ExperimentSpec:
    """What to run.

    ``reps`` is either one count for every ``n`` or a mapping ``n -> count``.
    """

    config: ClupConfig
    reps: int | Mapping[int, int] = 100
    n_list: tuple = (400,)
    alpha: float = 0.8
    mode: Mode = Mode.SIMULATE
    out: Path | None = None
    workers: int | None = None
    keep_residuals: bool = False
    keep_runs: bool = False

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        if self.mode in (Mode.SIMULATE, Mode.COMPARE) and not self.n_list:
            raise InvalidConfig("n_list must be nonempty")
        for n in self.n_list:
            if self.reps_for(n) < 1:
                raise InvalidConfig(f"reps must be >= 1 (n={n})")

    def reps_for(self, n: int) -> int:
        if isinstance(self.reps, Mapping):
            if n not in self.reps:
                raise InvalidConfig(f"no replication count for n={n}")
            return int(self.reps[n])
        return int(self.reps)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "alpha": self.alpha,
            "n_list": list(self.n_list),
            "reps": {str(n): self.reps_for(n) for n in self.n_list},
            "config": config_as_dict(self.config),
        }


@dataclass
class AggregateRow:
    """Across-replication mean and standard error at ``(n, k)``."""

    n: int
    k: int
    reps: int
    mean: dict
    se: dict
    theory: dict | None = None

    def flat(self) -> dict:
        out = {"n": self.n, "k": self.k, "reps": self.reps}
        for s in STATS:
            out[s] = self.mean[s]
            out[s + "_se"] = self.se[s]
        if self.theory:
            for s in STATS:
                if s in self.theory:
                    out[s + "_theory"] = self.theory[s]
        return out


@dataclass
class ReplicationFailure:
    n: int
    rep: int
    error: str
    message: str


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list
    failures: list
    attempted: dict
    invariant_violations: list
    runs: dict = field(default_factory=dict)
    instances: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    def failure_fraction(self, n: int) -> float:
        bad = sum(1 for f in self.failures if f.n == n)
        return bad / self.attempted[n] if self.attempted.get(n) else 0.0

    @property
    def ok(self) -> bool:
        too_many = any(self.failure_fraction(n) > FAILURE_LIMIT for n in self.attempted)
        return not too_many and not self.invariant_violations

    def row(self, n: int, k: int) -> AggregateRow:
        for r in self.rows:
            if r.n == n and r.k == k:
                return r
        raise KeyError((n, k))

    @property
    def params(self) -> dict:
        c = self.spec.config
        return {"alpha": self.spec.alpha, "sigma": c.sigma, "r": c.r}


def check_run(run: ClupRun, n: int) -> list:
    """Invariant violations of one run, as messages (empty when clean)."""
    bad = []
    radius = run.config.ball_radius(n)
    box = 1.0 / math.sqrt(n)
    prev = None
    for rec in run.records:
        tag = f"run {run.run_id} k={rec.k}"
        if rec.residual_norm > radius * (1 + 1e-8):
            bad.append(f"{tag}: residual {rec.residual_norm:.6g} above radius {radius:.6g}")
        if np.max(np.abs(rec.x_s)) > box + 1e-10:
            bad.append(f"{tag}: box violated")
        if abs(np.linalg.norm(rec.x_unit) - 1.0) > 1e-10:
            bad.append(f"{tag}: iterate not normalized")
        if not -1e-12 <= rec.d2 <= 1 + 1e-10:
            bad.append(f"{tag}: d2 = {rec.d2} outside [0, 1]")
        if abs(rec.d1) > math.sqrt(max(rec.d2, 0.0)) + 1e-12:
            bad.append(f"{tag}: Cauchy-Schwarz violated")
        if prev is not None and rec.s_hat < prev - 1e-9:
            bad.append(f"{tag}: objective decreased by {prev - rec.s_hat:.3g}")
        prev = rec.s_hat
    return bad


def _slim(inst: SystemInstance) -> SystemInstance:
    # overlap estimation needs x_sol and sigma only; dropping A keeps the
    # pickled results small
    return SystemInstance(np.empty((0, inst.n)), inst.x_sol, np.empty(0), inst.sigma, np.empty(0), inst.alpha)


def _replicate(task):
    n, i, alpha, config, keep_residuals = task
    seed = config.seed if isinstance(config.seed, tuple) else (config.seed,)
    key = (*seed, i)
    try:
        inst = generate_instance(n, alpha, config.sigma, key)
        run = run_clup(inst, config.with_(seed=key), run_id=i, keep_residuals=keep_residuals)
    except ClupError as exc:
        return i, None, None, (type(exc).__name__, str(exc))
    return i, run, _slim(inst) if keep_residuals else None, None


def _aggregate(n: int, runs: list) -> list:
    rows = []
    if not runs:
        return rows
    k_max = max(len(r.records) for r in runs)
    for k in range(1, k_max + 1):
        vals = np.array([r.table()[k - 1] for r in runs if len(r.records) >= k])
        reps = vals.shape[0]
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(4)
        rows.append(AggregateRow(n, k, reps, dict(zip(STATS, map(float, mean))), dict(zip(STATS, map(float, se)))))
    return rows


def aggregate_csv(rows) -> str:
    buf = io.StringIO()
    cols = ["n", "k", "reps"] + [c for s in STATS for c in (s, s + "_se")]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        f = r.flat()
        w.writerow([f[c] if isinstance(f[c], int) else repr(f[c]) for c in cols])
    return buf.getvalue()


def run_experiment(spec: ExperimentSpec, progress=None) -> ExperimentResult:
    """Run every replication of ``spec`` and aggregate per ``(n, k)``.

    Errors raised inside a replication are recorded as failures and do not
    stop the batch.  When ``spec.out`` is set, writes ``runs_n<N>.csv`` (one
    row per iteration record), ``aggregate.csv`` and the sidecar
    ``experiment.json`` there.
    """
    workers = spec.workers or default_workers()
    rows, failures, violations = [], [], []
    attempted, kept_runs, kept_inst, csv_text = {}, {}, {}, {}
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for n in spec.n_list:
            reps = spec.reps_for(n)
            tasks = [(n, i, spec.alpha, spec.config, spec.keep_residuals) for i in range(reps)]
            it = pool.map(_replicate, tasks, chunksize=max(1, reps // (4 * workers))) if pool else map(_replicate, tasks)
            runs, insts = [], []
            for i, run, inst, err in it:
                if err is not None:
                    failures.append(ReplicationFailure(n, i, *err))
                    logger.warning("n=%d rep=%d failed: %s: %s", n, i, *err)
                else:
                    runs.append(run)
                    insts.append(inst)
                    violations.extend(f"n={n} {m}" for m in check_run(run, n))
                if progress is not None:
                    progress(n, i)
            attempted[n] = reps
            rows.extend(_aggregate(n, runs))
            csv_text[n] = records_to_csv(runs)
            if spec.keep_runs or spec.keep_residuals:
                kept_runs[n], kept_inst[n] = runs, insts
    finally:
        if pool is not None:
            pool.shutdown()
    result = ExperimentResult(spec, rows, failures, attempted, violations, kept_runs, kept_inst)
    if spec.out is not None:
        write_outputs(result, csv_text)
    return result


def write_outputs(result: ExperimentResult, csv_text: dict) -> list:
    out = Path(result.spec.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for n, text in csv_text.items():
        p = out / f"runs_n{n}.csv"
        p.write_text(text)
        files.append(p)
    p = out / "aggregate.csv"
    p.write_text(aggregate_csv(result.rows))
    files.append(p)
    side = {
        "spec": result.spec.to_dict(),
        "record_columns": list(RECORD_COLUMNS),
        "failures": [vars(f) for f in result.failures],
        "attempted": {str(n): c for n, c in result.attempted.items()},
        "invariant_violations": result.invariant_violations,
        "ok": result.ok,
        "aggregate": [r.flat() for r in result.rows],
    }
    p = out / "experiment.json"
    p.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    files.append(p)
    result.files = files
    return files


# ---------------------------------------------------------------- comparison


def theory_by_iteration(theory) -> tuple:
    """``(params, {k: {stat: value}})`` for any theory object."""
    if isinstance(theory, TheoryFirst):
        return ({"alpha": theory.alpha, "sigma": theory.sigma, "r": theory.r},
                {1: {"p_err": theory.p_err, "neg_s_hat": -theory.s_hat, "d2": theory.d2, "d1": theory.d1}})
    if isinstance(theory, TheorySecond):
        params, rows = theory_by_iteration(theory.theory1)
        rows[2] = {"p_err": theory.p_err2, "neg_s_hat": -theory.s_hat2, "d2": theory.d2_2, "d1": theory.d1_2}
        return params, rows
    if isinstance(theory, RandomDualEstimate):
        params = {k: theory.params[k] for k in ("alpha", "sigma", "r")}
        rows = {int(r["k"]): {"p_err": r["p_err"], "neg_s_hat": r["neg_s_hat"], "d2": r["d2"], "d1": r["d1"]}
                for r in theory.rows()}
        return params, rows
    if isinstance(theory, tuple) and len(theory) == 2:
        return theory
    raise TypeError(f"unsupported theory object {type(theory).__name__}")


@dataclass
class ComparisonRow:
    n: int
    k: int
    stat: str
    sim: float
    se: float
    theory: float
    abs_dev: float
    se_dev: float
    flagged: bool


@dataclass
class ComparisonReport:
    rows: list

    @property
    def flagged(self) -> list:
        return [r for r in self.rows if r.flagged]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "k", "stat", "sim", "se", "theory", "abs_dev", "se_dev", "flagged"])
        for r in self.rows:
            w.writerow([r.n, r.k, r.stat, repr(r.sim), repr(r.se), repr(r.theory), repr(r.abs_dev),
                        repr(r.se_dev), int(r.flagged)])
        return buf.getvalue()

    def format(self) -> str:
        lines = [f"{'n':>5} {'k':>3} {'stat':>10} {'sim':>10} {'se':>9} {'theory':>10} {'dev/se':>8}"]
        for r in self.rows:
            mark = "  <-- >3 SE" if r.flagged else ""
            lines.append(f"{r.n:>5} {r.k:>3} {r.stat:>10} {r.sim:>10.5f} {r.se:>9.2e} {r.theory:>10.5f} "
                         f"{r.se_dev:>8.2f}{mark}")
        return "\n".join(lines)


def _same(a, b, rtol=1e-9):
    return abs(a - b) <= rtol * max(1.0, abs(a), abs(b))


def compare_table(sim, theory, sim_params: dict | None = None, n_se: float = 3.0) -> ComparisonReport:
    """Side-by-side simulated and theoretical statistics.

    Parameters
    ----------
    sim : ExperimentResult or list of AggregateRow
    theory : TheoryFirst, TheorySecond, RandomDualEstimate or ``(params, rows)``
    sim_params : dict, optional
        ``alpha``, ``sigma`` and ``r`` of the simulation; taken from ``sim``
        when it is an :class:`ExperimentResult`.
    n_se : float
        Flag threshold in standard errors.

    Raises
    ------
    KeyMismatch
        If the parameters disagree or no iteration index is shared.
    """
    if isinstance(sim, ExperimentResult):
        sim_params = sim_params or sim.params
        sim = sim.rows
    t_params, t_rows = theory_by_iteration(theory)
    if sim_params is not None:
        for key in ("alpha", "sigma", "r"):
            if key in sim_params and key in t_params and not _same(sim_params[key], t_params[key]):
                raise KeyMismatch(f"{key}: simulation {sim_params[key]!r} vs theory {t_params[key]!r}")
    out = []
    for row in sim:
        if row.k not in t_rows:
            continue
        for s in STATS:
            th = float(t_rows[row.k][s])
            dev = row.mean[s] - th
            se = row.se[s]
            se_dev = dev / se if se > 0 else (0.0 if dev == 0 else math.copysign(math.inf, dev))
            flagged = abs(dev) > n_se * se if se > 0 else abs(dev) > 1e-12
            out.append(ComparisonRow(row.n, row.k, s, row.mean[s], se, th, abs(dev), se_dev, flagged))
    if not out:
        raise KeyMismatch("simulation and theory share no iteration index")
    return ComparisonReport(out)
