import numpy as np
import pytest
from scipy.special import ndtr

from excursets.capacity2 import (
    capacity_two_segments,
    cond_integrand,
    regression_coeffs,
    regression_state,
    xi_covariance,
    y_deriv_variance,
)
from excursets.covariance import GaussianModel, QuadraticGaussianModel, deriv_cov
from excursets.geometry import TwoSegmentProblem, rho_direction, rho_map
from excursets.montecarlo import sqrt_factor

SHEARED = QuadraticGaussianModel([[2.0, 0.6], [0.6, 1.0]])
FAST = dict(m=12, theta_quad=8, n_points=1024, error_terms=False)


def test_derivative_variance_gaussian():
    p = TwoSegmentProblem(1.0, 1.0, 2.0, 0.7)
    for th in (0.2, 1.5, 2.9):
        assert y_deriv_variance(p, th) == pytest.approx(1.0)


def test_derivative_variance_branches_for_sheared_model():
    phi = np.pi / 4
    p = TwoSegmentProblem(1.0, 1.0, 1.0, phi, SHEARED)
    v1, v2 = y_deriv_variance(p, 0.5), y_deriv_variance(p, 1.5)
    d11 = SHEARED.partial(np.zeros(2), (1, 1))
    assert v1 - v2 == pytest.approx(4 * d11 * np.sin(phi) * np.cos(phi))
    # finite difference of the path covariance c(d) = r(rho(th + d) - rho(th))
    for th, val in ((0.5, v1), (1.5, v2)):
        d = 1e-4
        c = lambda x: SHEARED.r(rho_map(p, th + x) - rho_map(p, th))  # noqa: E731
        assert -(c(d) - 2 * c(0.0) + c(-d)) / d**2 == pytest.approx(val, rel=1e-6)


def test_regression_at_the_conditioning_point():
    p = TwoSegmentProblem(1.0, 1.0, 1.0, 0.4, SHEARED)
    for th in (0.3, 1.6):
        a, b = regression_coeffs(p, th, th)
        assert a == 1.0 and b == 0.0


def test_regression_same_branch_closed_form():
    p = TwoSegmentProblem(1.0, 1.0, 1.0)
    alpha, theta = 0.2, 0.7
    a, b = regression_coeffs(p, alpha, theta)
    assert a == pytest.approx(np.exp(-0.5 * (alpha - theta) ** 2))
    assert b == pytest.approx((theta - alpha) * np.exp(-0.5 * (alpha - theta) ** 2))


def test_regression_cross_branch_uses_the_planar_lag():
    p = TwoSegmentProblem(1.0, 1.0, 1.0, np.pi / 4)
    a, b = regression_coeffs(p, 1.5, 0.5)
    # rho(1.5) - rho(0.5) = 0.5 v2 - 0.5 v1 = (sqrt(2)/2, 0)
    assert a == pytest.approx(np.exp(-0.25))
    lag = rho_map(p, 1.5) - rho_map(p, 0.5)
    v = rho_direction(p, 0.5)
    assembled = v[0] * deriv_cov(p.model, lag, (0, 0), (1, 0)) + v[1] * deriv_cov(
        p.model, lag, (0, 0), (0, 1))
    assert b == pytest.approx(assembled)


def test_b_is_the_derivative_of_a():
    p = TwoSegmentProblem(1.0, 1.2, 0.8, 0.9, SHEARED)
    for alpha, theta in ((0.3, 0.9), (1.7, 0.4), (0.2, 1.5), (1.9, 1.4)):
        _, b = regression_coeffs(p, alpha, theta)
        v = rho_direction(p, theta)
        x, y = rho_map(p, alpha), rho_map(p, theta)
        d = 1e-5
        fd = (SHEARED.r(x - y - d * v) - SHEARED.r(x - y + d * v)) / (2 * d)
        assert b == pytest.approx(fd, abs=1e-9)


def test_xi_covariance_examples():
    p = TwoSegmentProblem(1.0, 1.0, 1.0)
    st = regression_state(p, 0.3, (0.3, 0.9), 7)
    assert xi_covariance(st, 0, 0) == pytest.approx(0.0, abs=1e-15)
    e, th = st.eta, 0.3
    i, j = 2, 5
    ai, aj = np.exp(-0.5 * (e[i] - th) ** 2), np.exp(-0.5 * (e[j] - th) ** 2)
    ref = np.exp(-0.5 * (e[i] - e[j]) ** 2) - ai * aj - (th - e[i]) * (th - e[j]) * ai * aj
    assert xi_covariance(st, i, j) == pytest.approx(ref, abs=1e-14)


def test_xi_covariance_is_the_schur_complement():
    p = TwoSegmentProblem(0.5, 1.0, 1.4, 0.6, SHEARED)
    th = 0.4
    st = regression_state(p, th, (0.4, 1.6), 9)
    pts = rho_map(p, st.eta)
    c = rho_map(p, th)
    v = rho_direction(p, th)
    m = SHEARED
    n = len(pts)
    J = np.empty((n + 2, n + 2))
    J[:n, :n] = m.r(pts[:, None] - pts[None, :])
    J[:n, n] = J[n, :n] = m.r(pts - c)
    J[:n, n + 1] = J[n + 1, :n] = m.grad(pts - c) @ (-v)
    J[n, n] = 1.0
    J[n, n + 1] = J[n + 1, n] = 0.0
    J[n + 1, n + 1] = v @ m.spectral_matrix() @ v
    schur = J[:n, :n] - J[:n, n:] @ np.linalg.solve(J[n:, n:], J[n:, :n])
    assert np.allclose(st.sigma, schur, atol=1e-12)
    assert np.all(np.diag(st.sigma) >= -1e-10)


def test_integrand_without_constraints_is_folded_mean():
    p = TwoSegmentProblem(1.0, 1.0, 1.0, 0.5, SHEARED)
    est = cond_integrand(p, 0.3, (0.3, 0.3), m=8)
    assert est.value == pytest.approx(np.sqrt(2 * y_deriv_variance(p, 0.3) / np.pi), abs=1e-3)
    assert abs(est.value - np.sqrt(2 * y_deriv_variance(p, 0.3) / np.pi)) <= est.abs_error + 1e-12


def test_integrand_high_threshold_coarse_grid():
    # constraints drop out once u * spacing is large
    p = TwoSegmentProblem(8.0, 2.0, 2.0)
    est = cond_integrand(p, 0.3, (0.3, 3.7), m=3)
    assert abs(est.value - np.sqrt(2 / np.pi)) < 1e-4


def test_integrand_grows_with_threshold_on_fine_grid():
    vals = [cond_integrand(TwoSegmentProblem(u, 1.0, 1.0), 0.3, (0.3, 1.7), m=24).value
            for u in (2.0, 8.0, 32.0)]
    assert vals[0] < vals[1] < vals[2] <= np.sqrt(2 / np.pi) + 1e-4


def test_integrand_against_finite_grid_mc():
    p = TwoSegmentProblem(1.0, 1.0, 1.0)
    m = 12
    st = regression_state(p, 0.3, (0.3, 1.7), m)
    est = cond_integrand(p, 0.3, (0.3, 1.7), m=m, n_points=2**15)
    # joint law of (xi, Y'): xi ~ N(0, Sigma) independent of Y' ~ N(0, y_var)
    N = 10**6
    # eigen square root: the residual at eta = theta is exactly zero and
    # must not pick up jitter noise
    F = sqrt_factor(st.sigma)
    rng = np.random.default_rng(5)
    xi = rng.standard_normal((N, F.shape[1])) @ F.T
    y = np.sqrt(st.y_var) * rng.standard_normal(N)
    ok = np.all(xi <= p.u * (1 - st.a) - np.outer(y / np.sqrt(st.y_var), st.b_std), axis=1)
    w = np.abs(y) * ok
    se = w.std(ddof=1) / np.sqrt(N)
    assert abs(w.mean() - est.value) < 3 * se + est.abs_error


def test_integrand_routes_agree():
    p = TwoSegmentProblem(1.0, 1.0, 1.0)
    a = cond_integrand(p, 0.3, (0.3, 1.7), m=12, n_points=2**14)
    b = cond_integrand(p, 0.3, (0.3, 1.7), m=12, n_points=2**12, method="quadrature")
    assert abs(a.value - b.value) < a.abs_error + b.abs_error
    with pytest.raises(ValueError):
        cond_integrand(p, 0.3, (0.3, 1.7), method="simpson")


def test_refinement_does_not_increase_integrand():
    p = TwoSegmentProblem(1.0, 1.0, 1.0)
    prev = None
    for m in (6, 11, 21):
        est = cond_integrand(p, 0.2, (0.2, 1.8), m=m, n_points=2**14)
        if prev is not None:
            assert est.value <= prev.value + est.abs_error + prev.abs_error
        prev = est


def test_point_set_capacity():
    est = capacity_two_segments(TwoSegmentProblem(1.0, 0.0, 0.0))
    assert est.value == pytest.approx(1 - ndtr(1.0), abs=1e-12)


def test_rice_upper_bound_at_high_level():
    est = capacity_two_segments(TwoSegmentProblem(2.5, 1.0, 1.0), **FAST)
    bound = (1 - ndtr(2.5)) + 2 * np.exp(-2.5**2 / 2) / (2 * np.pi)
    assert est.value <= bound
    assert est.value >= 1 - ndtr(2.5)


def test_sandwich_sheared_model():
    p = TwoSegmentProblem(1.0, 0.6, 0.9, 0.5, SHEARED)
    est = capacity_two_segments(p, **FAST)
    vmax = max(y_deriv_variance(p, 0.1), y_deriv_variance(p, 1.2))
    assert 1 - ndtr(1.0) <= est.value
    assert est.value <= 1 - ndtr(1.0) + 1.5 * np.sqrt(vmax) * np.exp(-0.5) / (2 * np.pi)


def test_monotone_in_threshold():
    vals = [capacity_two_segments(TwoSegmentProblem(u, 0.5, 0.7), **FAST).value
            for u in (0.0, 0.5, 1.0, 1.5)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_monotone_in_lengths():
    base = capacity_two_segments(TwoSegmentProblem(1.0, 0.5, 0.5), **FAST).value
    longer1 = capacity_two_segments(TwoSegmentProblem(1.0, 0.8, 0.5), **FAST).value
    longer2 = capacity_two_segments(TwoSegmentProblem(1.0, 0.5, 0.8), **FAST).value
    assert longer1 >= base and longer2 >= base


def test_routes_agree_at_equal_lengths():
    p = TwoSegmentProblem(1.0, 0.7, 0.7)
    a = capacity_two_segments(p, route="T1", **FAST)
    b = capacity_two_segments(p, route="T2", **FAST)
    assert abs(a.value - b.value) < 1e-6 + a.abs_error
    with pytest.raises(ValueError):
        capacity_two_segments(TwoSegmentProblem(1.0, 0.7, 0.9), route="T2", **FAST)


def test_error_budget_reported():
    est = capacity_two_segments(TwoSegmentProblem(1.0, 0.4, 0.4), m=8, theta_quad=8,
                                n_points=1024)
    info = est.info
    assert est.abs_error == pytest.approx(info["qmc_error"] + info["theta_quad_error"]
                                          + info["grid_error"])
    assert not info["clamped"]


def test_worker_count_does_not_change_result():
    p = TwoSegmentProblem(1.0, 0.5, 0.8)
    a = capacity_two_segments(p, workers=1, **FAST)
    b = capacity_two_segments(p, workers=3, **FAST)
    assert a.value == b.value and a.abs_error == b.abs_error


def test_rejects_wrong_problem_type():
    with pytest.raises(TypeError):
        capacity_two_segments(GaussianModel())
