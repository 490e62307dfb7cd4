"""Shared fixtures.

The expensive simulations used by the acceptance suite are computed once
per session and reused across criteria.  Each acceptance test records a
one-line verdict that is printed in the terminal summary.
"""

from __future__ import annotations

import pytest

from clup.harness import ExperimentSpec, run_experiment
from clup.model import ClupConfig

SEED = 2019
VERDICTS: dict = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])


def _sim(n_list, iters, r_sc, reps):
    cfg = ClupConfig(r_sc=r_sc, max_iters=iters, snr_db=13.0, seed=SEED)
    return run_experiment(ExperimentSpec(cfg, reps=reps, n_list=tuple(n_list), alpha=0.8))


@pytest.fixture(scope="session")
def sim_n400():
    """n=400, r_sc=1.3, six iterations, 600 replications."""
    return _sim([400], 6, 1.3, 600)


@pytest.fixture(scope="session")
def sweep_second():
    """Two iterations at n = 100, 200, 800, 1600 (n=400 comes from ``sim_n400``)."""
    reps = {100: 165, 200: 954, 800: 465, 1600: 170}
    return _sim(list(reps), 2, 1.3, reps)


@pytest.fixture(scope="session")
def sim_n800_r15():
    """n=800, r_sc=1.5, ten iterations, 465 replications."""
    return _sim([800], 10, 1.5, 465)


@pytest.fixture(scope="session")
def dual_estimate():
    from clup.repro import random_dual

    return random_dual(k_max=5, n_dual=10**5, seed=0)
