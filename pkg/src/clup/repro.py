"""One-shot reproductions of the published tables.

Each entry of :data:`REGISTRY` runs the relevant theory and/or simulation and
returns :class:`ReproLine` records pairing our value with the published one.
Ids follow the document order, ``table1`` to ``table15``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

from . import reference as ref
from .exceptions import InvalidConfig
from .harness import ExperimentSpec, run_experiment
from .model import R_PLT_DEFAULT, ClupConfig
from .random_dual import run_random_dual
from .rdt_first import FirstIterParams, solve_first
from .rdt_second import integral_route, solve_second

ALPHA = 0.8
R_SC = 1.3
# at 10 dB the published first-iteration radius is 0.2252 = 1.3 r_plt
R_PLT_10DB = 0.2252 / R_SC


@dataclass
class ReproLine:
    row: str
    stat: str
    ours: float
    published: float
    se: float | None = None

    @property
    def dev(self) -> float:
        return self.ours - self.published


@dataclass
class ReproResult:
    table_id: str
    description: str
    lines: list
    invariant_violations: list
    failures: int = 0

    @property
    def ok(self) -> bool:
        return not self.invariant_violations

    def format(self) -> str:
        out = [f"{self.table_id}: {self.description}",
               f"{'row':>10} {'stat':>10} {'ours':>11} {'se':>9} {'published':>11} {'diff':>10}"]
        for ln in self.lines:
            se = f"{ln.se:9.2e}" if ln.se is not None else f"{'-':>9}"
            out.append(f"{ln.row:>10} {ln.stat:>10} {ln.ours:>11.6f} {se} {ln.published:>11.6f} {ln.dev:>10.2e}")
        if self.failures:
            out.append(f"failed replications: {self.failures}")
        if self.invariant_violations:
            out.append(f"invariant violations: {len(self.invariant_violations)}")
            out.extend("  " + v for v in self.invariant_violations[:20])
        return "\n".join(out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "stat", "ours", "se", "published"])
        for ln in self.lines:
            w.writerow([ln.row, ln.stat, repr(ln.ours), "" if ln.se is None else repr(ln.se), repr(ln.published)])
        return buf.getvalue()


@lru_cache(maxsize=None)
def theory1(snr_db: float = 13.0, r: float = R_SC * R_PLT_DEFAULT, rho: float = 0.5):
    return solve_first(FirstIterParams.from_snr(ALPHA, snr_db, rho, r))


@lru_cache(maxsize=None)
def theory2(snr_db: float = 13.0, r: float = R_SC * R_PLT_DEFAULT, rho: float = 0.5):
    return solve_second(theory1(snr_db, r, rho))


@lru_cache(maxsize=None)
def random_dual(k_max: int = 5, n_dual: int = 10**5, seed: int = 0):
    return run_random_dual(theory1(), theory2(), k_max=k_max, n_dual=n_dual, seed=seed)


def _simulate(n_list, iters, r_sc, reps, seed, workers, r_plt=R_PLT_DEFAULT, snr_db=13.0):
    cfg = ClupConfig(r_plt=r_plt, r_sc=r_sc, max_iters=iters, snr_db=snr_db, seed=seed)
    return run_experiment(ExperimentSpec(cfg, reps=reps, n_list=tuple(n_list), alpha=ALPHA, workers=workers))


def _sim_lines(res, n, table, label="k", tag=""):
    lines = []
    for k, vals in table.items():
        row = res.row(n, k)
        for s, published in zip(ref.STATS, vals):
            lines.append(ReproLine(f"{tag}{label}={k}", s, row.mean[s], published, row.se[s]))
    return lines


def _iteration_table(n, iters, r_sc, table, default_reps):
    def run(reps=None, seed=2019, workers=None):
        res = _simulate([n], iters, r_sc, reps or default_reps, seed, workers)
        return _sim_lines(res, n, table), res
    return run


def _table2(reps=None, seed=2019, workers=None):
    lines = []
    for snr, r in ((10, 0.2252), (13, R_SC * R_PLT_DEFAULT)):
        t = theory1(float(snr), r)
        for name, published in zip(ref.THEORY_FIRST_FIELDS, ref.THEORY_FIRST[snr]):
            lines.append(ReproLine(f"{snr}dB", name, getattr(t, name), published))
    return lines, None


def _table3(reps=None, seed=2019, workers=None):
    lines, results = [], []
    for snr, r_plt in ((10, R_PLT_10DB), (13, R_PLT_DEFAULT)):
        res = _simulate([400], 1, R_SC, reps or 600, seed, workers, r_plt=r_plt, snr_db=float(snr))
        row = res.row(400, 1)
        published = dict(zip(("neg_s_hat", "xi", "p_err", "d2", "d1"), ref.SIM_FIRST_N400[snr]))
        for s in ref.STATS:
            lines.append(ReproLine(f"{snr}dB", s, row.mean[s], published[s], row.se[s]))
        results.append(res)
    return lines, results


def _sweep(k, table):
    def run(reps=None, seed=2019, workers=None):
        reps_map = {n: reps or c for n, c in ref.SWEEP_REPS.items()}
        res = _simulate(list(ref.SWEEP_REPS), k, R_SC, reps_map, seed, workers)
        lines = []
        for n, vals in table.items():
            row = res.row(n, k)
            for s, published in zip(ref.STATS, vals):
                lines.append(ReproLine(f"n={n}", s, row.mean[s], published, row.se[s]))
        return lines, res
    return run


def _table5(reps=None, seed=2019, workers=None):
    t = theory2()
    return [ReproLine("13dB", name, getattr(t, name) if name != "xi" else t.xi, published)
            for name, published in zip(ref.THEORY_SECOND_FIELDS, ref.THEORY_SECOND)], None


def _table6(reps=None, seed=2019, workers=None):
    t = theory2()
    lines = []
    for route, vals in (("identity", t.identity_quantities()), ("integral", integral_route(t))):
        for name, ours, published in zip(("s2", "s3", "c2z", "q1"), vals, ref.THEORY_SECOND_DERIVED):
            lines.append(ReproLine(route, name, ours, published))
    return lines, None


def _table7(reps=None, seed=2019, workers=None):
    res = _simulate([1600], 2, R_SC, reps or 170, seed, workers)
    row = res.row(1600, 2)
    published = dict(zip(("neg_s_hat", "xi", "p_err", "d2", "d1"), ref.SIM_SECOND_N1600))
    t = theory2()
    lines = [ReproLine("sim", s, row.mean[s], published[s], row.se[s]) for s in ref.STATS]
    ours_t = {"p_err": t.p_err2, "neg_s_hat": -t.s_hat2, "d2": t.d2_2, "d1": t.d1_2}
    lines += [ReproLine("theory", s, ours_t[s], ref.RANDOM_DUAL_ROWS[2][i]) for i, s in enumerate(ref.STATS)]
    return lines, res


def _table9(reps=None, seed=2019, workers=None):
    res = _simulate([1600], 2, R_SC, reps or 170, seed, workers)
    lines = _sim_lines(res, 1600, {1: ref.SWEEP_FIRST[1600], 2: ref.SWEEP_SECOND[1600]}, tag="sim ")
    t = theory2()
    for k, vals in ((1, (t.theory1.p_err, -t.theory1.s_hat, t.theory1.d2, t.theory1.d1)),
                    (2, (t.p_err2, -t.s_hat2, t.d2_2, t.d1_2))):
        lines += [ReproLine(f"theory k={k}", s, v, ref.RANDOM_DUAL_ROWS[k][i])
                  for i, (s, v) in enumerate(zip(ref.STATS, vals))]
    return lines, res


def _table10(reps=None, seed=0, workers=None):
    e = random_dual(seed=seed)
    lines = [ReproLine(f"k={k + 1}", "d1", float(e.d1[k]), ref.RANDOM_DUAL_D1[k]) for k in range(5)]
    lines += [ReproLine(f"k={k + 1}", "d2", float(e.d2[k]), ref.RANDOM_DUAL_D2[k]) for k in range(5)]
    P, Q = e.overlaps.P, e.overlaps.Q
    lines += [ReproLine("P", "P12", float(P[0, 1]), ref.P5_ESTIMATED[0][1]),
              ReproLine("Q", "Q12", float(Q[0, 1]), ref.Q5_ESTIMATED[0][1])]
    return lines, None


def _table11(reps=None, seed=0, workers=None):
    e = random_dual(seed=seed)
    lines = []
    for r in e.rows():
        for s, published in zip(ref.STATS, ref.RANDOM_DUAL_ROWS[r["k"]]):
            lines.append(ReproLine(f"k={r['k']}", s, r[s], published))
    return lines, None


def _theory_vs_sim(n, table, default_reps):
    def run(reps=None, seed=2019, workers=None):
        res = _simulate([n], 5, R_SC, reps or default_reps, seed, workers)
        lines = _sim_lines(res, n, table, tag="sim ")
        e = random_dual()
        for r in e.rows():
            for s, published in zip(ref.STATS, ref.RANDOM_DUAL_ROWS[r["k"]]):
                lines.append(ReproLine(f"theory k={r['k']}", s, r[s], published))
        return lines, res
    return run


REGISTRY = {
    "table1": ("CLuP over 10 iterations, r_sc=1.5, n=800 (simulated)",
               _iteration_table(800, 10, 1.5, ref.CLUP_R15_N800, 465)),
    "table2": ("first-iteration theory at 10 and 13 dB", _table2),
    "table3": ("first-iteration simulation at n=400 vs theory", _table3),
    "table4": ("first iteration across n (simulated)", _sweep(1, ref.SWEEP_FIRST)),
    "table5": ("second-iteration theory", _table5),
    "table6": ("second-iteration derived quantities, both routes", _table6),
    "table7": ("second-iteration simulation at n=1600 vs theory", _table7),
    "table8": ("second iteration across n (simulated)", _sweep(2, ref.SWEEP_SECOND)),
    "table9": ("first two iterations, theory vs simulation at n=1600", _table9),
    "table10": ("random dual d1/d2 estimates and leading overlaps", _table10),
    "table11": ("random dual per-iteration statistics", _table11),
    "table12": ("CLuP over 6 iterations, r_sc=1.3, n=400 (simulated)",
                _iteration_table(400, 6, R_SC, ref.CLUP_R13_N400, 600)),
    "table13": ("n=400 simulation vs theory, 5 iterations", _theory_vs_sim(400, dict(list(ref.CLUP_R13_N400.items())[:5]), 600)),
    "table14": ("CLuP over 10 iterations, r_sc=1.5, n=800 (simulated, repeated)",
                _iteration_table(800, 10, 1.5, ref.CLUP_R15_N800, 465)),
    "table15": ("n=800 simulation vs theory, 5 iterations", _theory_vs_sim(800, ref.CLUP_R13_N800, 465)),
}


def run_repro(table_id: str, reps: int | None = None, seed: int | None = None, workers: int | None = None) -> ReproResult:
    """Reproduce one table.  ``reps`` overrides the default replication count."""
    key = table_id.lower()
    if key not in REGISTRY:
        raise InvalidConfig(f"unknown table id {table_id!r}; choose from {', '.join(REGISTRY)}")
    desc, fn = REGISTRY[key]
    kw = {"reps": reps, "workers": workers}
    if seed is not None:
        kw["seed"] = seed
    lines, res = fn(**kw)
    results = res if isinstance(res, list) else ([res] if res is not None else [])
    violations = [v for r in results for v in r.invariant_violations]
    failures = sum(len(r.failures) for r in results)
    violations += [f"failure fraction above 1% at n={n}" for r in results for n in r.attempted
                   if r.failure_fraction(n) > 0.01]
    for ln in lines:
        if not math.isfinite(ln.ours):
            violations.append(f"{ln.row} {ln.stat}: non-finite value")
    return ReproResult(key, desc, lines, violations, failures)


__all__ = ["REGISTRY", "ReproLine", "ReproResult", "run_repro", "theory1", "theory2", "random_dual"]
