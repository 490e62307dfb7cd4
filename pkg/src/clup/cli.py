"""Command-line entry point (``clup``)."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .exceptions import ClupError, CovarianceNotPSD
from .harness import ExperimentSpec, compare_table, run_experiment
from .model import R_PLT_DEFAULT, ClupConfig, config_from_mapping, dump_instance, generate_instance, read_config_file
from .random_dual import run_random_dual
from .rdt_first import FirstIterParams, solve_first
from .rdt_second import solve_second

log = logging.getLogger("clup")


def _common(p: argparse.ArgumentParser, sim: bool = True) -> None:
    p.add_argument("--config", type=Path, help="key = value file (n, alpha, snr_db, r_plt, r_sc, max_iters, seed, reps, init, rho)")
    p.add_argument("--alpha", type=float, help="m/n ratio (default 0.8)")
    p.add_argument("--snr-db", type=float, help="1/sigma^2 in dB (default 13)")
    p.add_argument("--rho", type=float, help="fraction of correct signs in x0 (default 0.5)")
    p.add_argument("--r-plt", type=float, help=f"plateau radius (default {R_PLT_DEFAULT})")
    p.add_argument("--r-sc", type=float, help="radius scaling (default 1.3)")
    p.add_argument("--seed", type=int, help="base seed (default 2019)")
    p.add_argument("--out", type=Path, help="output directory")
    if sim:
        p.add_argument("--n", type=int, nargs="+", help="dimension(s) (default 400)")
        p.add_argument("--reps", type=int, help="replications per n (default 100)")
        p.add_argument("--iters", type=int, help="CLuP iterations (default 2)")
        p.add_argument("--workers", type=int, help="worker processes (default $CLUP_WORKERS or 1)")
        p.add_argument("--init", choices=("random", "agreement"), help="random signs or exact agreement fraction rho")


def _settings(args) -> dict:
    s = {"alpha": 0.8, "snr_db": 13.0, "rho": 0.5, "r_plt": R_PLT_DEFAULT, "r_sc": 1.3, "seed": 2019,
         "n": [400], "reps": 100, "max_iters": 2, "init": "random"}
    if getattr(args, "config", None):
        cf = read_config_file(args.config)
        if "n" in cf:
            cf["n"] = [cf["n"]]
        s.update(cf)
    for key, attr in (("alpha", "alpha"), ("snr_db", "snr_db"), ("rho", "rho"), ("r_plt", "r_plt"),
                      ("r_sc", "r_sc"), ("seed", "seed"), ("n", "n"), ("reps", "reps"), ("max_iters", "iters"),
                      ("init", "init")):
        val = getattr(args, attr, None)
        if val is not None:
            s[key] = val
    return s


def _config(s: dict) -> ClupConfig:
    return config_from_mapping({k: s[k] for k in ("r_plt", "r_sc", "max_iters", "snr_db", "seed", "init", "rho")})


def _theory_params(args, s) -> FirstIterParams:
    r = args.r if getattr(args, "r", None) is not None else s["r_sc"] * s["r_plt"]
    return FirstIterParams.from_snr(s["alpha"], s["snr_db"], s["rho"], r)


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _print_rows(rows) -> None:
    print(f"{'n':>5} {'k':>3} {'reps':>5} {'p_err':>10} {'-s_hat':>9} {'d2':>9} {'d1':>9}")
    for r in rows:
        m = r.mean
        print(f"{r.n:>5} {r.k:>3} {r.reps:>5} {m['p_err']:>10.6f} {m['neg_s_hat']:>9.5f} {m['d2']:>9.5f} {m['d1']:>9.5f}")


def _spec(s, args, keep=False) -> ExperimentSpec:
    return ExperimentSpec(_config(s), reps=s["reps"], n_list=tuple(s["n"]), alpha=s["alpha"], out=args.out,
                          workers=args.workers, keep_runs=keep)


def cmd_simulate(args) -> int:
    s = _settings(args)
    spec = _spec(s, args)
    if args.dump_instance:
        cfg = spec.config
        for n in spec.n_list:
            path = Path(str(args.dump_instance).replace("{n}", str(n)))
            dump_instance(generate_instance(n, s["alpha"], cfg.sigma, (s["seed"], 0)), path)
            print(f"wrote instance n={n} (replication 0) to {path}")
    res = run_experiment(spec)
    _print_rows(res.rows)
    return _report(res)


def _report(res) -> int:
    for n in res.attempted:
        bad = sum(1 for f in res.failures if f.n == n)
        if bad:
            print(f"n={n}: {bad}/{res.attempted[n]} replications failed", file=sys.stderr)
    for v in res.invariant_violations[:20]:
        print("invariant violated: " + v, file=sys.stderr)
    if res.files:
        print("wrote " + ", ".join(str(f) for f in res.files))
    return 0 if res.ok else 1


def _check_first(t) -> list:
    bad = []
    if not t.gamma_hat > 0:
        bad.append("gamma_hat must be positive")
    if not 0 <= t.c1z_hat <= 4:
        bad.append("c1z out of [0, 4]")
    if not 0 <= t.p_err <= 1 or not 0 <= t.d2 <= 1:
        bad.append("p_err or d2 out of [0, 1]")
    if abs(t.d2 - (t.c1z_hat + 2 * t.d1 - 1)) > 1e-8:
        bad.append("d2 = c1z + 2 d1 - 1 identity fails")
    return bad


def cmd_theory(args) -> int:
    s = _settings(args)
    p = _theory_params(args, s)
    t1 = solve_first(p)
    bad = _check_first(t1)
    if args.which == "first":
        print(t1.to_json())
        print(t1.table_row())
        _write(args.out, "theory_first.json", t1.to_json() + "\n")
    else:
        t2 = solve_second(t1, nodes=args.nodes)
        print(t2.to_json())
        print(t2.table_rows())
        ident = t2.identity_quantities()
        if max(abs(a - b) for a, b in zip(ident, (t2.s2, t2.s3, t2.c2z, t2.q1))) > 1e-6:
            bad.append("constraint identities fail")
        if abs(t2.p1) > 1 or abs(t2.q1) > 1 or not 0 <= t2.p_err2 <= 1:
            bad.append("overlap or probability out of range")
        _write(args.out, "theory_second.json", t2.to_json() + "\n")
    for b in bad:
        print("invariant violated: " + b, file=sys.stderr)
    return 0 if not bad else 1


def cmd_random_dual(args) -> int:
    s = _settings(args)
    p = _theory_params(args, s)
    t1 = solve_first(p)
    t2 = solve_second(t1)
    est = run_random_dual(t1, t2, k_max=args.k_max, n_dual=args.n_dual, seed=s["seed"])
    print(f"{'k':>3} {'p_err':>10} {'-s_hat':>9} {'d2':>9} {'d1':>9}")
    lines = ["k,p_err,neg_s_hat,d2,d1"]
    for r in est.rows():
        print(f"{r['k']:>3} {r['p_err']:>10.6f} {r['neg_s_hat']:>9.5f} {r['d2']:>9.5f} {r['d1']:>9.5f}")
        lines.append(f"{r['k']},{r['p_err']!r},{r['neg_s_hat']!r},{r['d2']!r},{r['d1']!r}")
    with np.printoptions(precision=4, suppress=True):
        print("P =\n" + str(est.overlaps.P))
        print("Q =\n" + str(est.overlaps.Q))
    _write(args.out, "random_dual.csv", "\n".join(lines) + "\n")
    _write(args.out, "random_dual.json", est.to_json() + "\n")
    bad = []
    try:
        est.overlaps.check()
    except CovarianceNotPSD as exc:
        bad.append(str(exc))
    z_ok = all(np.all((x >= -1) & (x <= 1)) for x in est.state.x_histories.T)
    if not z_ok:
        bad.append("realized x outside [-1, 1]")
    for b in bad:
        print("invariant violated: " + b, file=sys.stderr)
    return 0 if not bad else 1


def cmd_compare(args) -> int:
    s = _settings(args)
    spec = _spec(s, args)
    res = run_experiment(spec)
    p = FirstIterParams(s["alpha"], spec.config.sigma, s["rho"], spec.config.r)
    t1 = solve_first(p)
    k_max = max(r.k for r in res.rows)
    if k_max == 1:
        theory = t1
    elif k_max == 2:
        theory = solve_second(t1)
    else:
        theory = run_random_dual(t1, solve_second(t1), k_max=k_max, n_dual=args.n_dual, seed=s["seed"])
    report = compare_table(res, theory)
    print(report.format())
    _write(args.out, "comparison.csv", report.to_csv())
    flagged = len(report.flagged)
    print(f"{flagged} of {len(report.rows)} entries beyond 3 SE")
    code = _report(res)
    if args.strict and flagged:
        code = 1
    return code


def cmd_repro(args) -> int:
    from .repro import REGISTRY, run_repro

    if args.list or not args.table_id:
        for key, (desc, _) in REGISTRY.items():
            print(f"{key:>8}  {desc}")
        return 0
    res = run_repro(args.table_id, reps=args.reps, seed=args.seed, workers=args.workers)
    print(res.format())
    _write(args.out, f"repro_{res.table_id}.csv", res.to_csv())
    return 0 if res.ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clup", description="CLuP detector simulation and random duality theory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo runs of the detector")
    _common(p)
    p.add_argument("--dump-instance", type=Path, help="write replication 0's instance ('.csv' or binary; '{n}' is substituted)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("theory", help="first or second iteration theory")
    p.add_argument("which", choices=("first", "second"))
    _common(p, sim=False)
    p.add_argument("--r", type=float, help="radius r (default r_sc * r_plt)")
    p.add_argument("--nodes", type=int, default=64, help="quadrature nodes for the second iteration")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("random-dual", help="sampled random dual for iterations >= 3")
    _common(p, sim=False)
    p.add_argument("--r", type=float, help="radius r (default r_sc * r_plt)")
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--n-dual", type=int, default=10**5)
    p.set_defaults(func=cmd_random_dual)

    p = sub.add_parser("compare", help="simulation against theory with 3-SE flags")
    _common(p)
    p.add_argument("--n-dual", type=int, default=10**5)
    p.add_argument("--strict", action="store_true", help="nonzero exit when any entry is flagged")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("repro", help="reproduce a published table")
    p.add_argument("table_id", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_repro)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ClupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
