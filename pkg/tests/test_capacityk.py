import numpy as np
import pytest
from scipy.special import ndtr

from excursets.capacity2 import capacity_two_segments, cond_integrand
from excursets.capacityk import (
    alpha_beta,
    e_i_of_t,
    joint_survival_k,
    k_regression_state,
    w_matrix,
)
from excursets.covariance import QuadraticGaussianModel
from excursets.geometry import KSegmentProblem, TwoSegmentProblem

SHEARED = QuadraticGaussianModel([[2.0, 0.6], [0.6, 1.0]])
FAST = dict(n=10, t_quad=6, n_points=1024, error_terms=False)


def test_alpha_for_orthogonal_directions():
    p = KSegmentProblem(1.0, (0.0, np.pi / 2), (1.0, 1.0))
    a, b = alpha_beta(p, 0, 1.0, 1, 1.0)
    assert a == pytest.approx(np.exp(-1.0))
    # grad r(lag) . v_0 with lag = (1, -1)
    assert b == pytest.approx(-np.exp(-1.0))


def test_beta_is_the_directional_derivative():
    p = KSegmentProblem(0.5, (0.2, 1.9, 4.0), (1.0, 0.7, 1.3), SHEARED)
    v = p.directions
    d = 1e-5
    for i, t, j, h in ((0, 0.6, 1, 0.3), (2, 1.1, 0, 0.9), (1, 0.4, 1, 0.2)):
        _, b = alpha_beta(p, i, t, j, h)
        fd = (SHEARED.r((t + d) * v[i] - h * v[j]) - SHEARED.r((t - d) * v[i] - h * v[j])) / (2 * d)
        assert b == pytest.approx(fd, abs=1e-9)


def test_w_matrix_masks_inactive_cells():
    p = KSegmentProblem(1.0, (0.0, 2.0), (1.0, 0.4))
    st = k_regression_state(p, 0, 0.6, 11)
    w = w_matrix(st, 0.3, 1.0)
    assert w.shape == (11, 2)
    assert np.all(np.isinf(w[st.grid > 0.6 + 1e-9, 0]))
    assert np.all(np.isinf(w[st.grid > 0.4 + 1e-9, 1]))
    assert np.all(np.isfinite(w[st.active]))
    ref = 1.0 * (1 - st.alpha) - 0.3 * st.beta
    assert np.allclose(w[st.active], ref[st.active])


def test_pivot_coordinate_is_degenerate():
    p = KSegmentProblem(1.0, (0.0, 2.0), (1.0, 0.4), SHEARED)
    st = k_regression_state(p, 0, 0.6, 11)
    idx = np.flatnonzero((st.points[:, 0] == 0) & np.isclose(st.points[:, 1], 0.6))
    assert idx.size == 1
    assert st.sigma[idx[0], idx[0]] == pytest.approx(0.0, abs=1e-12)
    assert st.point_alpha[idx[0]] == pytest.approx(1.0)
    assert st.point_beta[idx[0]] == pytest.approx(0.0, abs=1e-12)


def test_residual_covariance_is_schur_complement():
    p = KSegmentProblem(0.5, (0.3, 2.2, 4.1), (0.9, 0.6, 1.2), SHEARED)
    i, t = 2, 0.8
    st = k_regression_state(p, i, t, 9)
    v = p.directions
    pts = st.points[:, 1:2] * v[st.points[:, 0].astype(int)]
    c = t * v[i]
    n = len(pts)
    J = np.empty((n + 2, n + 2))
    J[:n, :n] = SHEARED.r(pts[:, None] - pts[None, :])
    J[:n, n] = J[n, :n] = SHEARED.r(pts - c)
    J[:n, n + 1] = J[n + 1, :n] = SHEARED.grad(c - pts) @ v[i]
    J[n, n], J[n, n + 1], J[n + 1, n] = 1.0, 0.0, 0.0
    J[n + 1, n + 1] = v[i] @ SHEARED.spectral_matrix() @ v[i]
    schur = J[:n, :n] - J[:n, n:] @ np.linalg.solve(J[n:, n:], J[n:, :n])
    assert np.allclose(st.sigma, schur, atol=1e-12)


def test_e_at_origin_is_folded_mean():
    p = KSegmentProblem(1.0, (0.0, 1.0), (1.0, 1.0))
    est = e_i_of_t(p, 0, 0.0)
    assert est.value == pytest.approx(np.sqrt(2 / np.pi), abs=1e-10)


def test_e_high_threshold_coarse_grid():
    p = KSegmentProblem(8.0, (0.0, 2.0), (4.0, 4.0))
    est = e_i_of_t(p, 0, 3.4, n=3)
    assert abs(est.value - np.sqrt(2 / np.pi)) < 1e-4


def test_e_matches_sweeping_line_integrand():
    # two equal segments: the circle of radius t and the sweep at theta = l1 - t
    # constrain the same point set
    two = TwoSegmentProblem(1.0, 1.0, 1.0, np.pi / 5)
    k = two.as_k_segments()
    for t in (0.25, 0.5, 0.8):
        theta = 1.0 - t
        e = e_i_of_t(k, 0, t, n=21, n_points=8192)
        c = cond_integrand(two, theta, (theta, 2.0 - theta), m=int(round(2 * t / 0.05)) + 1,
                           n_points=8192)
        assert abs(e.value - c.value) < e.abs_error + c.abs_error + 1e-9


def test_short_segments_at_zero_threshold():
    p = KSegmentProblem(0.0, (0.0, 2.0, 4.0), (1e-6, 1e-6, 1e-6))
    est = joint_survival_k(p, **FAST)
    assert est.value == pytest.approx(0.5, abs=1e-5)


def test_single_segment_matches_sweeping_line():
    two = TwoSegmentProblem(1.0, 0.8, 0.0)
    a = capacity_two_segments(two, m=16, theta_quad=8, n_points=2048)
    b = joint_survival_k(two.as_k_segments(), n=16, t_quad=8, n_points=2048)
    assert abs(a.value - b.info["capacity"]) < a.abs_error + b.abs_error


def test_permutation_gives_identical_result():
    a = joint_survival_k(KSegmentProblem(1.0, (0.1, 2.0, 4.0), (0.5, 0.3, 0.4)), **FAST)
    b = joint_survival_k(KSegmentProblem(1.0, (4.0, 0.1, 2.0), (0.4, 0.5, 0.3)), **FAST)
    assert a.value == b.value


def test_rotation_invariance_isotropic():
    base = (0.1, 2.0, 4.0)
    lengths = (0.5, 0.3, 0.4)
    a = joint_survival_k(KSegmentProblem(1.0, base, lengths), **FAST)
    b = joint_survival_k(KSegmentProblem(1.0, tuple(x + 0.77 for x in base), lengths), **FAST)
    assert abs(a.value - b.value) < 1e-6 + a.abs_error + b.abs_error


def test_survival_decreases_with_length_and_grows_with_threshold():
    s = [joint_survival_k(KSegmentProblem(1.0, (0.0, 2.5), (x, 0.4)), **FAST).value
         for x in (0.2, 0.5, 0.9)]
    assert s[0] >= s[1] >= s[2]
    s = [joint_survival_k(KSegmentProblem(u, (0.0, 2.5), (0.5, 0.4)), **FAST).value
         for u in (0.0, 1.0, 2.0)]
    assert s[0] <= s[1] <= s[2]


def test_sandwich_bounds():
    p = KSegmentProblem(1.0, (0.0, 2.1, 4.2), (0.6, 0.5, 0.4), SHEARED)
    est = joint_survival_k(p, **FAST)
    dens = np.exp(-0.5) / np.sqrt(2 * np.pi)
    lam = SHEARED.spectral_matrix()
    rice = sum(ln * np.sqrt(2 * (v @ lam @ v) / np.pi)
               for ln, v in zip(p.lengths, p.directions))
    assert ndtr(1.0) - dens * rice <= est.value <= ndtr(1.0)
    single = joint_survival_k(KSegmentProblem(1.0, (0.0,), (0.6,), SHEARED), **FAST)
    assert est.value <= single.value + est.abs_error + single.abs_error


def test_dimension_cap():
    p = KSegmentProblem(1.0, (0.0, 2.0), (1.0, 1.0))
    with pytest.raises(ValueError, match="cap"):
        k_regression_state(p, 0, 1.0, 1500)
    with pytest.raises(ValueError):
        k_regression_state(p, 0, 1.5, 10)


def test_rejects_wrong_problem_type():
    with pytest.raises(TypeError):
        joint_survival_k(TwoSegmentProblem(1.0, 1.0, 1.0))
