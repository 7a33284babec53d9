"""Joint visibility survival for ``k`` segments from a common origin.

A circle centred at the origin grows; the first boundary point it meets on
segment ``i`` at radius ``t`` is a level crossing of ``X`` along ``v_i`` with
the field below ``u`` on every segment point of radius below ``t``.  Rice's
formula turns this into an integral over ``t`` of ``E_i(t)``, evaluated by
regression on ``(X_{t v_i}, d_{v_i} X_{t v_i})``.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .covariance import directional_deriv_variance
from .gauss import (
    DEFAULT_QMC_SEED,
    MAX_DIM,
    N_SHIFTS,
    EstimateWithError,
    abs_weighted_orthant_shifts,
)
from .geometry import KSegmentProblem

__all__ = [
    "KRegressionState",
    "alpha_beta",
    "k_regression_state",
    "w_matrix",
    "e_i_of_t",
    "joint_survival_k",
]

_INV_SQRT_2PI = 1.0 / np.sqrt(2 * np.pi)


def alpha_beta(problem, i, t, j, h):
    """``alpha = E[X_{h v_j} X_{t v_i}]`` and ``beta = E[X_{h v_j} d_{v_i} X_{t v_i}]``.

    ``h`` may be an array.  ``beta`` is not standardized.
    """
    v = problem.directions
    h = np.asarray(h, dtype=float)
    lag = t * v[i] - h[..., None] * v[j]
    alpha = problem.model.r(lag)
    beta = problem.model.grad(lag) @ v[i]
    return alpha, beta


@dataclass(frozen=True)
class KRegressionState:
    """Regression of the constrained segment points on the pivot at ``t v_i``.

    ``grid`` holds the ``n`` equidistant radii on ``[0, max l_j]`` and
    ``alpha``/``beta`` their ``(n, k)`` coefficients, ``beta`` standardized
    by ``sqrt(deriv_var)``.  The constraint set actually passed to the CDF is
    ``points`` (pairs ``(j, h)``): active grid cells, the endpoints
    ``min(l_j, t)`` of every segment, and the shared origin once.
    """

    i: int
    t: float
    grid: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    active: np.ndarray
    deriv_var: float
    points: np.ndarray
    point_alpha: np.ndarray
    point_beta: np.ndarray
    sigma: np.ndarray


def _constraint_points(problem, t, grid):
    """``(j, h)`` pairs of grid cells with ``h <= min(l_j, t)`` plus endpoints."""
    pts = [(0, 0.0)]
    tol = 1e-12
    for j, lj in enumerate(problem.lengths):
        top = min(lj, t)
        hs = grid[(grid > tol) & (grid <= top + tol)]
        if top > tol and (hs.size == 0 or top - hs[-1] > tol):
            hs = np.append(hs, top)
        pts.extend((j, float(h)) for h in hs)
    return np.array(pts, dtype=float).reshape(-1, 2)


def k_regression_state(problem, i, t, n):
    if n < 2:
        raise ValueError("grid needs n >= 2 points")
    if not 0 <= t <= problem.lengths[i] + 1e-12:
        raise ValueError(f"t={t!r} outside [0, l_{i}]")
    grid = np.linspace(0.0, max(problem.lengths), n)
    k = problem.k
    v = problem.directions
    deriv_var = directional_deriv_variance(problem.model, v[i])
    sd = np.sqrt(deriv_var)
    alpha = np.empty((n, k))
    beta = np.empty((n, k))
    for j in range(k):
        alpha[:, j], b = alpha_beta(problem, i, t, j, grid)
        beta[:, j] = b / sd
    limits = np.minimum(np.asarray(problem.lengths), t)
    active = grid[:, None] <= limits[None, :] + 1e-12

    pts = _constraint_points(problem, t, grid)
    if pts.shape[0] > MAX_DIM:
        raise ValueError(f"{pts.shape[0]} constraints exceed the CDF dimension cap {MAX_DIM}")
    js = pts[:, 0].astype(int)
    xy = pts[:, 1:2] * v[js]
    lag = t * v[i] - xy
    pa = problem.model.r(lag)
    pb = (problem.model.grad(lag) @ v[i]) / sd
    R = problem.model.r(xy[:, None, :] - xy[None, :, :])
    sigma = R - np.outer(pa, pa) - np.outer(pb, pb)
    sigma = 0.5 * (sigma + sigma.T)
    return KRegressionState(i, float(t), grid, alpha, beta, active, deriv_var,
                            pts, pa, pb, sigma)


def w_matrix(state, y, u):
    """Upper limits ``u (1 - alpha) - y beta`` on the grid, ``+inf`` where inactive.

    ``y`` is the standardized derivative value.
    """
    w = u * (1.0 - state.alpha) - y * state.beta
    return np.where(state.active, w, np.inf)


def _e_shifts(problem, i, t, n, n_points, seed):
    state = k_regression_state(problem, i, t, n)
    est = abs_weighted_orthant_shifts(problem.u * (1.0 - state.point_alpha),
                                      state.point_beta, state.sigma,
                                      n_points=n_points, seed=seed)
    return np.sqrt(state.deriv_var) * est


def e_i_of_t(problem, i, t, n=24, n_points=4096, seed=DEFAULT_QMC_SEED):
    """``E[|d_{v_i} X| 1(X <= u on the segments within radius t) | X_{t v_i} = u]``.

    The derivative is integrated jointly with the residual CDF by randomized
    QMC; the error is three standard errors over the randomizations.
    """
    est = _e_shifts(problem, i, t, n, n_points, seed)
    value = float(est.mean())
    err = float(3 * est.std(ddof=1) / np.sqrt(len(est)))
    return EstimateWithError(value, err, "genz-qmc-joint", {"n": n})


def _canonical(problem):
    """Segments sorted by (angle mod 2 pi, length) so assembly ignores input order."""
    ang = np.mod(np.asarray(problem.angles), 2 * np.pi)
    order = np.lexsort((np.asarray(problem.lengths), ang))
    return KSegmentProblem(problem.u, tuple(ang[order]),
                           tuple(np.asarray(problem.lengths)[order]), problem.model)


def _rice_sum(problem, n_nodes, n, n_points, seed, workers):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    jobs = []
    for i, li in enumerate(problem.lengths):
        breaks = sorted({0.0, li, *(lj for lj in problem.lengths if lj < li)})
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            nodes = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
            for t, wt in zip(nodes, 0.5 * (hi - lo) * w):
                jobs.append((i, float(t), wt))

    def run(job):
        i, t, _ = job
        return _e_shifts(problem, i, t, n, n_points, seed)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(run, jobs))
    else:
        values = [run(j) for j in jobs]
    total = np.zeros(N_SHIFTS)
    for (_, _, wt), val in zip(jobs, values):
        total = total + wt * val
    return total


def joint_survival_k(problem, n=24, t_quad=16, n_points=4096, seed=DEFAULT_QMC_SEED,
                     workers=1, error_terms=True):
    """``P[L_1 > l_1, ..., L_k > l_k]``, the probability that no segment meets ``A_u``.

    Equals ``Phi(u)`` minus ``phi(u)`` times the Rice integrals of ``E_i`` over
    ``[0, l_i]`` (composite Gauss-Legendre, ``t_quad`` nodes per panel, panel
    breaks at the shorter lengths).  ``info["capacity"]`` holds ``T(K) = 1 -
    survival``.  The error combines QMC, the t-rule change against half the
    nodes and the grid change from ``n`` to ``2 n - 1`` points.
    """
    if not isinstance(problem, KSegmentProblem):
        raise TypeError("problem must be a KSegmentProblem")
    canon = _canonical(problem)
    u = canon.u
    dens = float(np.exp(-0.5 * u * u) * _INV_SQRT_2PI)
    S = float(ndtr(u)) - dens * _rice_sum(canon, t_quad, n, n_points, seed, workers)
    value = float(S.mean())
    qmc = float(3 * S.std(ddof=1) / np.sqrt(len(S)))
    info = {"n": n, "t_quad": t_quad, "qmc_error": qmc}
    err = qmc
    if error_terms:
        half = max(t_quad // 2, 2)
        J_half = _rice_sum(canon, half, n, n_points, seed, workers).mean()
        J_fine = _rice_sum(canon, half, 2 * n - 1, n_points, seed, workers).mean()
        quad = abs(value - (float(ndtr(u)) - dens * J_half))
        grid = dens * abs(J_half - J_fine)
        info.update(t_quad_error=quad, grid_error=grid)
        err += quad + grid
    clamped = min(max(value, 0.0), 1.0)
    info["clamped"] = bool(abs(clamped - value) > err)
    if info["clamped"]:
        warnings.warn(f"survival estimate {value} clamped to [0, 1] beyond its error bound")
    info["capacity"] = 1.0 - clamped
    return EstimateWithError(clamped, err, "growing-circle", info)
