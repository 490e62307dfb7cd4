import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clup.exceptions import InfeasibleRadius, InvalidDimension
from clup.inner import InnerProblem, kkt_certificate, min_residual, solve_inner, spectral_norm_sq

from oracles import grid_oracle, grid_sweep, kkt_sweep, random_inner_problem


def test_grid_oracle_small_dimensions():
    worst_obj, worst_x, below = grid_sweep(60)
    assert worst_obj <= 1e-3
    # maximizers are pinned only to about the square root of the grid accuracy
    assert worst_x <= 1e-2
    assert below <= 1e-12


def test_kkt_and_feasibility_random_problems():
    gap, res, box = kkt_sweep(200, seed=3)
    assert gap <= 1e-8
    assert res <= 1e-8
    assert box <= 1e-12


def test_bisection_agrees_with_ipm():
    rng = np.random.default_rng(5)
    for _ in range(30):
        p = random_inner_problem(rng, int(rng.integers(3, 30)))
        a = solve_inner(p, method="ipm")
        b = solve_inner(p, method="bisection")
        assert b.kkt_gap <= 1e-8
        assert abs(a.objective - b.objective) <= 1e-8
        np.testing.assert_allclose(a.x_star, b.x_star, atol=1e-6)


def test_box_vertex_when_ball_inactive():
    rng = np.random.default_rng(1)
    p = random_inner_problem(rng, 8, active=False)
    sol = solve_inner(p)
    b = 1 / math.sqrt(8)
    np.testing.assert_array_equal(sol.x_star, np.sign(p.c) * b)
    assert sol.method == "vertex"
    assert sol.kkt_gap <= 1e-12


def test_n1_closed_form():
    # one unknown: the feasible set is an interval, maximize c x on it
    A = np.array([[2.0]])
    y = np.array([0.5])
    p = InnerProblem(np.array([1.0]), A, y, 0.3)
    sol = solve_inner(p)
    assert sol.x_star[0] == pytest.approx((0.5 + 0.3) / 2.0, abs=1e-12)
    p = InnerProblem(np.array([-1.0]), A, y, 0.3)
    assert solve_inner(p).x_star[0] == pytest.approx((0.5 - 0.3) / 2.0, abs=1e-12)


def test_infeasible_radius_raises():
    rng = np.random.default_rng(2)
    p = random_inner_problem(rng, 10)
    _, rho = min_residual(p.A, p.y, p.box_half_width)
    bad = InnerProblem(p.c, p.A, p.y, 0.5 * rho)
    for method in ("ipm", "bisection"):
        with pytest.raises(InfeasibleRadius):
            solve_inner(bad, method=method)


def test_shape_validation():
    with pytest.raises(InvalidDimension):
        InnerProblem(np.ones(3), np.ones((2, 4)), np.ones(2), 1.0)
    with pytest.raises(InvalidDimension):
        InnerProblem(np.ones(4), np.ones((2, 4)), np.ones(2), 0.0)


def test_warm_start_reproduces_cold_solution():
    rng = np.random.default_rng(9)
    p = random_inner_problem(rng, 40)
    cold = solve_inner(p)
    c2 = p.c + 0.01 * rng.standard_normal(p.n)
    cold2 = solve_inner(p.with_c(c2))
    warm2 = solve_inner(p.with_c(c2), warm_start=cold.x_star)
    np.testing.assert_allclose(warm2.x_star, cold2.x_star, atol=1e-9)


def test_min_residual_matches_bounded_lstsq():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((6, 3))
    y = rng.standard_normal(6)
    x, rho = min_residual(A, y, 0.2)
    assert np.all(np.abs(x) <= 0.2)
    # brute force over a fine grid of the 3-D box
    g = np.linspace(-0.2, 0.2, 81)
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    assert rho <= np.min(np.linalg.norm(y - X @ A.T, axis=1)) + 1e-12


def test_spectral_norm_upper_bounds_largest_singular_value():
    A = np.random.default_rng(0).standard_normal((30, 20))
    s = np.linalg.svd(A, compute_uv=False)[0] ** 2
    L = spectral_norm_sq(A)
    assert s <= L <= s * 1.001


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), t=st.floats(0.1, 10.0), u=st.floats(0.1, 10.0))
def test_scaling_equivariance(seed, t, u):
    """Scaling (A, y, r) or c by positive factors leaves the maximizer unchanged."""
    rng = np.random.default_rng(seed)
    p = random_inner_problem(rng, int(rng.integers(2, 15)))
    base = solve_inner(p)
    scaled = solve_inner(InnerProblem(u * p.c, t * p.A, t * p.y, t * p.r))
    np.testing.assert_allclose(scaled.x_star, base.x_star, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_sign_flip_symmetry(seed):
    """Flipping a coordinate of c and the matching column of A flips that coordinate."""
    rng = np.random.default_rng(seed)
    p = random_inner_problem(rng, int(rng.integers(2, 12)))
    j = int(rng.integers(p.n))
    A2 = p.A.copy()
    A2[:, j] *= -1
    c2 = p.c.copy()
    c2[j] *= -1
    a = solve_inner(p).x_star
    b = solve_inner(InnerProblem(c2, A2, p.y, p.r)).x_star
    a[j] *= -1
    np.testing.assert_allclose(a, b, atol=1e-7)


def test_kkt_certificate_detects_non_optimal_point():
    rng = np.random.default_rng(8)
    p = random_inner_problem(rng, 10)
    sol = solve_inner(p)
    assert kkt_certificate(p, sol.x_star) <= 1e-8
    assert kkt_certificate(p, 0.5 * sol.x_star) > 1e-4


def test_grid_oracle_is_feasible():
    rng = np.random.default_rng(12)
    p = random_inner_problem(rng, 2, 2)
    x, v = grid_oracle(p)
    assert np.linalg.norm(p.y - p.A @ x) <= p.r
    assert v == pytest.approx(p.c @ x)
