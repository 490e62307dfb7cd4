import math

import numpy as np
import pytest

from clup.exceptions import DomainError
from clup.model import R_PLT_DEFAULT
from clup.rdt_first import (FirstIterParams, plateau, solve_first, solve_first_foc, xi_grad_hess, xi_rd1,
                            zhat_quantiles)
from clup.rdt_second import SecondIntegrals, integral_route, profile_over_p, second_tensor_stats, solve_second, xi_rd2
from clup.repro import theory1, theory2

from oracles import mc_check


@pytest.fixture(scope="module")
def t1():
    return theory1()


@pytest.fixture(scope="module")
def t2():
    return theory2()


def test_first_stationarity(t1):
    _, grad, H = xi_grad_hess(t1.params, t1.c1z_hat, t1.s1_hat, t1.gamma_hat, t1.nu_hat)
    assert np.max(np.abs(grad)) <= 1e-6
    # the inner problem is a maximum in (gamma, nu)
    assert np.all(np.linalg.eigvalsh(H) < 0)


def test_first_level_and_identities(t1):
    assert t1.xi == pytest.approx(t1.r, abs=1e-8)
    assert xi_rd1(t1.params, t1.c1z_hat, t1.s1_hat, t1.gamma_hat, t1.nu_hat) == pytest.approx(t1.r, abs=1e-8)
    ez, ez2, pe = zhat_quantiles(t1.gamma_hat, t1.nu_hat, t1.rho)
    assert t1.d1 == pytest.approx(1 - ez, abs=1e-10)
    assert t1.c1z_hat == pytest.approx(ez2, abs=1e-8)
    assert t1.p_err == pytest.approx(pe, abs=1e-12)
    assert t1.d2 == pytest.approx(t1.c1z_hat + 2 * t1.d1 - 1, abs=1e-8)
    assert t1.s_hat == t1.s1_hat


def test_first_gradient_matches_finite_differences(t1):
    p = t1.params
    args = (t1.c1z_hat * 1.1, t1.s1_hat * 0.9, t1.gamma_hat * 1.2, t1.nu_hat * 0.8)
    val, grad, H = xi_grad_hess(p, *args)
    assert val == pytest.approx(xi_rd1(p, *args), abs=1e-12)
    eps = 1e-6
    c, s, g, v = args
    fd = [(xi_rd1(p, c, s, g + eps, v) - xi_rd1(p, c, s, g - eps, v)) / (2 * eps),
          (xi_rd1(p, c, s, g, v + eps) - xi_rd1(p, c, s, g, v - eps)) / (2 * eps)]
    np.testing.assert_allclose(grad, fd, atol=1e-7)
    fdh = (xi_grad_hess(p, c, s, g + eps, v)[1] - xi_grad_hess(p, c, s, g - eps, v)[1]) / (2 * eps)
    np.testing.assert_allclose(H[0], fdh, atol=1e-5)


def test_first_foc_cross_check(t1):
    g, v, c, s1 = solve_first_foc(t1.params, start=(t1.gamma_hat * 1.05, t1.nu_hat * 0.95))
    assert (g, v, c, s1) == pytest.approx((t1.gamma_hat, t1.nu_hat, t1.c1z_hat, t1.s1_hat), abs=1e-7)


def test_plateau_value():
    r_min, _ = plateau(FirstIterParams.from_snr(0.8, 13.0))
    assert r_min == pytest.approx(R_PLT_DEFAULT, abs=5e-4)


def test_first_monotone_in_radius():
    # a looser ball gives a worse first iterate: p_err rises with r
    errs = [solve_first(FirstIterParams.from_snr(0.8, 13.0, 0.5, r)).p_err for r in (0.14, 0.16, 0.2)]
    assert errs[0] < errs[1] < errs[2]


def test_first_domain_errors():
    with pytest.raises(DomainError):
        FirstIterParams(alpha=0.8, sigma=0.2, rho=1.5)
    with pytest.raises(DomainError):
        xi_rd1(FirstIterParams(0.8, 0.2), 0.1, -0.1, -1.0, 0.5)


def test_second_identities_and_level(t2):
    s2, s3, c2z, q1 = t2.identity_quantities()
    assert (s2, s3, c2z, q1) == pytest.approx((t2.s2, t2.s3, t2.c2z, t2.q1), abs=1e-8)
    assert t2.xi == pytest.approx(t2.theory1.r, abs=1e-6)
    val = xi_rd2(t2.theory1, t2.p1, t2.q1, t2.c2z, t2.s2, t2.s3, t2.gamma2, t2.nu2_vec, t2.nu2_lin)
    assert val == pytest.approx(t2.theory1.r, abs=1e-6)


def test_second_routes_agree(t2):
    ours = integral_route(t2)
    # the tensor rule is only algebraically accurate away from the clamp kinks
    np.testing.assert_allclose(ours, t2.identity_quantities(), atol=1e-3)


def test_second_quadrature_converges(t2):
    args = (t2.p1, t2.gamma2, t2.nu2_vec, t2.nu2_lin)
    a = SecondIntegrals(t2.theory1, 64).stats(*args)
    b = SecondIntegrals(t2.theory1, 128).stats(*args)
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-9)
    c = second_tensor_stats(t2.theory1, *args, nodes=100)
    d = second_tensor_stats(t2.theory1, *args, nodes=200)
    for k in c:
        assert abs(c[k] - d[k]) <= 5e-4


def test_second_improves_on_first(t2):
    t1 = t2.theory1
    assert t2.p_err2 < t1.p_err
    assert t2.d1_2 > t1.d1
    assert -t2.s_hat2 > -t1.s_hat
    assert -1 <= t2.p1 <= 1 and -1 <= t2.q1 <= 1


def test_second_is_saddle_over_p(t2):
    # the minimal s2 as a function of the dual overlap peaks at p1
    vals = profile_over_p(t2.theory1, [t2.p1 - 0.05, t2.p1, t2.p1 + 0.05])
    assert vals[1] >= max(vals[0], vals[2]) - 1e-9


def test_monte_carlo_oracles_subsample(t2):
    """Reduced-sample version; the acceptance suite runs the full 10^7 draws."""
    for name, val, mean, se in mc_check(t2, n_samples=10**6):
        assert abs(val - mean) <= 3 * se + 1e-12, name
