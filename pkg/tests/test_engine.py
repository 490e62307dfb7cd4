import io
import math

import numpy as np
import pytest

from clup.engine import RECORD_COLUMNS, Termination, ml_exhaustive, records_to_csv, run_clup, stats_from_vector
from clup.exceptions import InfeasibleRadius, InvalidDimension
from clup.harness import check_run
from clup.model import ClupConfig, FixedVector, generate_instance


def test_stats_from_vector():
    x_sol = np.array([1, -1, 1, -1]) / 2
    x_prev = np.array([1, 1, 1, 1]) / 2
    x_s = np.array([0.5, -0.25, -0.1, 0.0])
    p_err, s, d2, d1 = stats_from_vector(x_s, x_prev, x_sol)
    # the zero component counts as an error
    assert p_err == 0.5
    assert s == pytest.approx(x_prev @ x_s)
    assert d2 == pytest.approx(x_s @ x_s)
    assert d1 == pytest.approx(x_sol @ x_s)
    with pytest.raises(InvalidDimension):
        stats_from_vector(np.ones(3), np.ones(4), np.ones(4))


@pytest.fixture(scope="module")
def run200():
    cfg = ClupConfig(r_sc=1.3, max_iters=6, seed=(3, 0))
    inst = generate_instance(200, 0.8, cfg.sigma, (3, 0))
    return inst, run_clup(inst, cfg, keep_residuals=True)


def test_run_invariants(run200):
    inst, run = run200
    assert len(run.records) == 6
    assert run.terminated_reason is Termination.MAX_ITERS
    assert check_run(run, 200) == []
    s = run.table()[:, 1]
    assert np.all(np.diff(s) >= -1e-9)
    for r in run.records:
        assert r.kkt_gap <= 1e-8
        assert np.linalg.norm(r.residual_dir) == pytest.approx(1.0)


def test_run_reproducible(run200):
    inst, run = run200
    again = run_clup(inst, run.config)
    assert again.table().tobytes() == run.table().tobytes()


def test_fixed_point_when_ball_contains_vertex():
    # with a huge radius the first solution is the starting vertex and stays put
    inst = generate_instance(30, 0.8, 0.1, 2)
    x0 = np.where(np.arange(30) % 2, 1.0, -1.0)
    cfg = ClupConfig(r_plt=10.0, r_sc=1.0, max_iters=3, init=FixedVector(x0))
    run = run_clup(inst, cfg)
    for r in run.records:
        np.testing.assert_allclose(r.x_unit, x0 / math.sqrt(30))
        assert r.s_hat == pytest.approx(1.0) and r.d2 == pytest.approx(1.0)


def test_convergence_tolerance_stops_early():
    inst = generate_instance(80, 0.8, 0.2238, 4)
    cfg = ClupConfig(r_sc=1.5, max_iters=30, convergence_tol=1e-6, seed=4)
    run = run_clup(inst, cfg)
    assert run.terminated_reason is Termination.CONVERGED
    assert run.delta < 1e-6 and len(run.records) < 30


def test_infeasible_first_iteration():
    inst = generate_instance(40, 0.8, 0.3, 1)
    with pytest.raises(InfeasibleRadius):
        run_clup(inst, ClupConfig(r_plt=1e-3, r_sc=1.0))


def test_bisection_and_ipm_runs_agree():
    inst = generate_instance(60, 0.8, 0.2238, 6)
    cfg = ClupConfig(r_sc=2.0, max_iters=4, seed=6)
    a = run_clup(inst, cfg).table()
    b = run_clup(inst, cfg.with_(inner_method="bisection")).table()
    np.testing.assert_allclose(a, b, atol=1e-7)


def test_records_csv(run200):
    _, run = run200
    text = records_to_csv([run])
    lines = text.splitlines()
    assert lines[0] == ",".join(RECORD_COLUMNS)
    assert len(lines) == 7
    buf = io.StringIO()
    records_to_csv([run], buf)
    assert buf.getvalue() == text


def test_ml_exhaustive_small():
    rng = np.random.default_rng(0)
    n = 6
    A = rng.standard_normal((5, n))
    x = np.where(rng.random(n) < 0.5, -1.0, 1.0) / math.sqrt(n)
    y = A @ x + 0.05 * rng.standard_normal(5)
    best = ml_exhaustive(A, y, chunk=7)
    cands = [np.array(s) / math.sqrt(n) for s in np.ndindex(*(2,) * n)]
    cands = [2 * c - 1 / math.sqrt(n) for c in cands]
    vals = [np.sum((y - A @ c) ** 2) for c in cands]
    assert np.sum((y - A @ best) ** 2) == pytest.approx(min(vals))
    with pytest.raises(InvalidDimension):
        ml_exhaustive(np.ones((2, 30)), np.ones(2))
