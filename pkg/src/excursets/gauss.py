"""Gaussian numerical kernels.

Multivariate normal CDF by separation of variables with randomized
quasi-Monte Carlo, PSD factorization with a jitter ladder, exact sampling,
``E|W1 W2|`` for bivariate normals, and one-dimensional Gaussian quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri

__all__ = [
    "EstimateWithError",
    "CovarianceMatrix",
    "FactorizationError",
    "psd_factor",
    "mvn_cdf",
    "mvn_cdf_shifts",
    "abs_weighted_orthant_shifts",
    "chol_sample",
    "abs_product_moment",
    "gauss_hermite_expectation",
    "abs_expectation",
    "rayleigh_rule",
]

VAR_EPS = 1e-12
MAX_DIM = 2000
N_SHIFTS = 8
DEFAULT_QMC_SEED = 20140517
_SQRT_2PI = np.sqrt(2 * np.pi)


class FactorizationError(np.linalg.LinAlgError):
    """Covariance could not be factorized within the jitter budget."""


@dataclass(frozen=True)
class EstimateWithError:
    """A numerical result with an absolute error bound.

    ``abs_error`` is a deterministic quadrature tolerance, three Monte Carlo
    standard errors, or a sum of both; ``method`` says which.
    """

    value: float
    abs_error: float
    method: str
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.value) or not np.isfinite(self.abs_error):
            raise ValueError(f"non-finite estimate {self.value!r} +/- {self.abs_error!r}")
        if self.abs_error < 0:
            raise ValueError("abs_error must be nonnegative")

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class CovarianceMatrix:
    """Dense symmetric covariance with its near-degenerate coordinates flagged."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(M, M.T, atol=1e-12, rtol=1e-10):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "matrix", 0.5 * (M + M.T))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def degenerate(self) -> np.ndarray:
        return np.diag(self.matrix) < VAR_EPS

    def factor(self):
        return psd_factor(self.matrix)


def _as_matrix(cov):
    if isinstance(cov, CovarianceMatrix):
        return cov.matrix
    return CovarianceMatrix(np.atleast_2d(np.asarray(cov, dtype=float))).matrix


def psd_factor(cov):
    """Lower Cholesky factor, escalating diagonal jitter when needed.

    Jitter starts at ``1e-12 * trace / m`` and grows tenfold up to
    ``1e-6 * trace / m``.  Returns ``(L, jitter)``.
    """
    cov = _as_matrix(cov)
    m = cov.shape[0]
    if m == 0:
        return np.zeros((0, 0)), 0.0
    if np.min(np.linalg.eigvalsh(cov)) < -1e-8 * max(1.0, np.trace(cov) / m):
        raise FactorizationError("covariance is not positive semidefinite")
    try:
        return np.linalg.cholesky(cov), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = np.trace(cov) / m
    for k in range(-12, -5):
        jitter = 10.0**k * scale
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(m)), jitter
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError("factorization failed after the jitter budget")


@lru_cache(maxsize=1)
def _primes(count=MAX_DIM):
    limit = 20000
    sieve = np.ones(limit, dtype=bool)
    sieve[:2] = False
    for p in range(2, int(limit**0.5) + 1):
        if sieve[p]:
            sieve[p * p :: p] = False
    return np.flatnonzero(sieve)[:count]


def _kronecker_points(n_points, dim, shift):
    """Shifted Richtmyer points ``frac(k * sqrt(p_i) + shift)``, tent-periodized."""
    z = np.sqrt(_primes()[:dim].astype(float))
    k = np.arange(1, n_points + 1, dtype=float)[:, None]
    x = np.mod(k * z[None, :] + shift[None, :], 1.0)
    return np.abs(2.0 * x - 1.0)


def _reorder_and_factor(cov, b):
    """Rank-revealing pivoted Cholesky ordered by smallest conditional probability.

    ``b`` is a representative limit vector.  Variables whose conditional
    variance falls below 1e-12 are moved to the end with a zero diagonal; they
    are deterministic given the earlier ones and enter the integrand as
    indicators.  Returns ``(perm, L)``.
    """
    m = cov.shape[0]
    C = cov
    if np.min(np.linalg.eigvalsh(C)) < -1e-8 * max(1.0, np.trace(C) / m):
        raise FactorizationError("covariance is not positive semidefinite")
    perm = np.arange(m)
    L = np.zeros((m, m))
    y = np.zeros(m)
    for i in range(m):
        rest = perm[i:]
        d = C[rest, rest] - np.sum(L[i:, :i] ** 2, axis=1)
        dmax = np.max(d)
        if dmax <= VAR_EPS:
            # remaining rows are linear in the earlier variables
            break
        s = L[i:, :i] @ y[:i]
        sd = np.sqrt(np.maximum(d, 1e-300))
        prob = ndtr((b[rest] - s) / sd)
        # tiny pivots amplify rounding, so only well-conditioned candidates compete
        j = i + int(np.argmin(np.where(d >= 1e-6 * dmax, prob, np.inf)))
        if j != i:
            perm[[i, j]] = perm[[j, i]]
            L[[i, j], :i] = L[[j, i], :i]
        L[i, i] = np.sqrt(C[perm[i], perm[i]] - np.sum(L[i, :i] ** 2))
        if i + 1 < m:
            col = C[perm[i + 1 :], perm[i]] - L[i + 1 :, :i] @ L[i, :i]
            L[i + 1 :, i] = col / L[i, i]
        bi = (b[perm[i]] - L[i, :i] @ y[:i]) / L[i, i]
        pi = ndtr(bi)
        # mean of a standard normal truncated to (-inf, bi]
        y[i] = -np.exp(-0.5 * bi * bi) / _SQRT_2PI / pi if pi > 1e-300 else bi
    return perm, L


def _sov_product(L, B, W):
    """Separation-of-variables integrand for limits ``B`` and uniforms ``W``.

    ``B[..., i]`` are the (already permuted) upper limits and ``W[..., i]`` the
    uniforms for the first ``m - 1`` variables; leading axes broadcast.  A zero
    diagonal entry marks a deterministic row, which contributes an indicator.
    """
    m = L.shape[0]
    e = ndtr(B[..., 0] / L[0, 0])
    f = e
    ys = []
    for i in range(1, m):
        ys.append(ndtri(np.clip(W[..., i - 1] * e, 1e-300, 1.0 - 1e-16)))
        acc = L[i, 0] * ys[0]
        for j in range(1, i):
            if L[i, j] != 0.0:
                acc = acc + L[i, j] * ys[j]
        if L[i, i] > 0:
            e = ndtr((B[..., i] - acc) / L[i, i])
        else:
            e = (B[..., i] - acc >= -1e-12).astype(float)
        f = f * e
    return f


def _prepare(cov, B):
    """Split off deterministic and unconstrained coordinates of a batch."""
    diag = np.diag(cov)
    deg = diag < VAR_EPS
    free = ~deg & ~np.all(np.isposinf(B), axis=tuple(range(B.ndim - 1)))
    return deg, free


def mvn_cdf_shifts(upper, cov, n_points=1024, n_shifts=N_SHIFTS, seed=DEFAULT_QMC_SEED):
    """Per-randomization estimates of ``P(xi <= upper)`` for a batch of limits.

    ``upper`` has shape ``(K, m)``; rows share ``cov``.  Returns an array of
    shape ``(n_shifts, K)`` whose rows are i.i.d. unbiased estimates, so any
    linear functional of the rows can be averaged with a standard error.
    """
    cov = _as_matrix(cov)
    B = np.atleast_2d(np.asarray(upper, dtype=float))
    K, m = B.shape
    if m != cov.shape[0]:
        raise ValueError(f"dimension mismatch: {m} limits for a {cov.shape[0]}-dim covariance")
    if m > MAX_DIM:
        raise ValueError(f"dimension {m} exceeds the cap {MAX_DIM}")
    out = np.ones((n_shifts, K))
    deg, free = _prepare(cov, B)
    if np.any(deg):
        out *= np.all(B[:, deg] >= -1e-12, axis=1)[None, :]
    B = B[:, free]
    cov = cov[np.ix_(free, free)]
    m = B.shape[1]
    out *= ~np.any(np.isneginf(B), axis=1)[None, :]
    if m == 0:
        return out
    if m == 1:
        return out * ndtr(B[:, 0] / np.sqrt(cov[0, 0]))[None, :]

    b_rep = np.where(np.isfinite(B), B, np.sign(B) * 40.0).mean(axis=0)
    perm, L = _reorder_and_factor(cov, b_rep)
    B = B[:, perm]
    shifts = np.random.default_rng(seed).random((n_shifts, m - 1))
    for s in range(n_shifts):
        W = _kronecker_points(n_points, m - 1, shifts[s])
        out[s] *= _sov_product(L, B[None, :, :], W[:, None, :]).mean(axis=0)
    return out


def abs_weighted_orthant_shifts(offset, slope, cov, n_points=8192, n_shifts=N_SHIFTS,
                                seed=DEFAULT_QMC_SEED):
    """Per-randomization estimates of ``E[|Z| P(xi <= offset - slope Z | Z)]``.

    ``Z ~ N(0, 1)`` is independent of ``xi ~ N(0, cov)``.  ``|Z|`` is drawn as a
    Rayleigh variable from the first QMC coordinate and used with both signs,
    and the remaining coordinates drive separation of variables, so the whole
    expectation is a single QMC integral.  Deterministic coordinates (variance
    below 1e-12) become indicators of ``offset - slope Z >= 0``.
    """
    cov = _as_matrix(cov)
    c = np.asarray(offset, dtype=float)
    d = np.asarray(slope, dtype=float)
    m = c.shape[0]
    if cov.shape[0] != m or d.shape != (m,):
        raise ValueError("offset, slope and covariance dimensions disagree")
    if m > MAX_DIM:
        raise ValueError(f"dimension {m} exceeds the cap {MAX_DIM}")
    if np.any(np.isneginf(c)):
        return np.zeros(n_shifts)
    deg = np.diag(cov) < VAR_EPS
    free = ~deg & ~np.isposinf(c)
    det_c, det_d = c[deg], d[deg]
    c, d = c[free], d[free]
    cov = cov[np.ix_(free, free)]
    m = c.shape[0]
    if m:
        perm, L = _reorder_and_factor(cov, c)
        c, d = c[perm], d[perm]
    shifts = np.random.default_rng(seed).random((n_shifts, m + 1))
    out = np.empty(n_shifts)
    sign = np.array([1.0, -1.0])[:, None]
    for s in range(n_shifts):
        W = _kronecker_points(n_points, m + 1, shifts[s])
        r = np.sqrt(-2.0 * np.log1p(-np.minimum(W[:, 0], 1.0 - 1e-16)))
        z = sign * r[None, :]                      # (2, P)
        f = np.ones_like(z)
        if det_c.size:
            lim = det_c[None, None, :] - det_d[None, None, :] * z[..., None]
            f = f * np.all(lim >= -1e-12, axis=-1)
        if m:
            B = c[None, None, :] - d[None, None, :] * z[..., None]
            f = f * _sov_product(L, B, W[None, :, 1:])
        out[s] = f.sum(axis=0).mean() / _SQRT_2PI
    return out


def mvn_cdf(upper, cov, rel_tol=1e-4, abs_tol=1e-8, seed=DEFAULT_QMC_SEED,
            min_points=512, max_points=2**17):
    """``P(xi <= upper)`` for ``xi ~ N(0, cov)``.

    Doubles the number of QMC points until three standard errors over the
    randomizations fall below ``max(rel_tol * value, abs_tol)`` or the point
    budget runs out.  Coordinates with variance below 1e-12 are deterministic
    zeros; ``+inf`` limits drop their coordinate.
    """
    b = np.asarray(upper, dtype=float).reshape(1, -1)
    n = min_points
    while True:
        est = mvn_cdf_shifts(b, cov, n_points=n, seed=seed)[:, 0]
        value = float(np.clip(est.mean(), 0.0, 1.0))
        err = float(3 * est.std(ddof=1) / np.sqrt(len(est)))
        if err <= max(rel_tol * value, abs_tol) or 2 * n > max_points:
            return EstimateWithError(value, err, "genz-qmc", {"points": n})
        n *= 2


def chol_sample(cov, mean=None, count=1, seed=0, batch_size=10000):
    """Draw ``count`` Gaussian vectors; batches are seeded by ``(seed, index)``.

    Output does not depend on how batches are scheduled, only on ``seed``,
    ``count`` and ``batch_size``.
    """
    return np.concatenate(list(iter_samples(cov, mean, count, seed, batch_size)), axis=0)


def iter_samples(cov, mean=None, count=1, seed=0, batch_size=10000, factor=None):
    cov = _as_matrix(cov)
    m = cov.shape[0]
    mean = np.zeros(m) if mean is None else np.asarray(mean, dtype=float)
    if mean.shape != (m,):
        raise ValueError("mean has the wrong dimension")
    L = psd_factor(cov)[0] if factor is None else factor
    n_batches = -(-int(count) // batch_size)
    for k in range(n_batches):
        n = min(batch_size, count - k * batch_size)
        rng = np.random.default_rng([seed, k])
        z = rng.standard_normal((n, m))
        yield mean + z @ L.T


def _fold_mean(m, s):
    """``E|N(m, s^2)|``, with ``s = 0`` giving ``|m|``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(s > 0, m / np.where(s > 0, s, 1.0), np.sign(m) * np.inf)
        val = s * np.sqrt(2 / np.pi) * np.exp(-0.5 * t * t) + m * (1 - 2 * ndtr(-t))
    return np.where(s > 0, val, np.abs(m))


def _abs_product_fixed(mu, C, order, span=9.0):
    mu1, mu2 = mu[..., 0], mu[..., 1]
    c11, c12, c22 = C[..., 0, 0], C[..., 0, 1], C[..., 1, 1]
    s1 = np.sqrt(np.maximum(c11, 0.0))
    safe = np.where(s1 > 0, s1, 1.0)
    slope = np.where(s1 > 0, c12 / safe, 0.0)  # d m(w) / dz
    s2 = np.sqrt(np.maximum(c22 - slope**2, 0.0))
    # kinks in z of |w| and of |E[W2 | W1]|
    with np.errstate(divide="ignore", invalid="ignore"):
        z0 = np.where(s1 > 0, -mu1 / safe, 0.0)
        z1 = np.where(slope != 0, -mu2 / np.where(slope != 0, slope, 1.0), 0.0)
    cuts = np.sort(np.stack([np.full_like(z0, -span), np.clip(z0, -span, span),
                             np.clip(z1, -span, span), np.full_like(z0, span)], -1), -1)
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = cuts[..., :-1, None], cuts[..., 1:, None]
    z = 0.5 * (b - a) * x + 0.5 * (a + b)
    wz = 0.5 * (b - a) * w
    wv = mu1[..., None, None] + s1[..., None, None] * z
    m2 = mu2[..., None, None] + slope[..., None, None] * z
    integrand = np.abs(wv) * _fold_mean(m2, s2[..., None, None]) * np.exp(-0.5 * z * z)
    return np.sum(wz * integrand, axis=(-2, -1)) / _SQRT_2PI


def abs_product_moment(mean, cov, order=48):
    """``E|W1 W2|`` for ``(W1, W2) ~ N(mean, cov)``; broadcasts over leading axes.

    Integrates ``|w| E[|W2| | W1 = w]`` (a folded-normal mean) over the law of
    ``W1`` with Gauss-Legendre panels split at both kinks.  The error is the
    difference between ``order`` and ``2 * order`` nodes per panel.
    """
    mu = np.asarray(mean, dtype=float)
    C = np.asarray(cov, dtype=float)
    if C.shape[-2:] != (2, 2) or mu.shape[-1] != 2:
        raise ValueError("abs_product_moment needs a 2-vector mean and 2x2 covariance")
    det = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] ** 2
    tr = C[..., 0, 0] + C[..., 1, 1]
    if np.any(C[..., 0, 0] < -1e-12) or np.any(C[..., 1, 1] < -1e-12) or np.any(
        det < -1e-10 * np.maximum(tr, 1.0) ** 2
    ):
        raise ValueError("covariance is not positive semidefinite")
    coarse = _abs_product_fixed(mu, C, order)
    fine = _abs_product_fixed(mu, C, 2 * order)
    err = np.abs(fine - coarse)
    if np.ndim(fine) == 0:
        return EstimateWithError(float(fine), float(err), "gauss-legendre-1d")
    return fine, err


def gauss_hermite_expectation(f, variance, order=40):
    """``E f(Y)`` for ``Y ~ N(0, variance)``.

    Uses half-range Gauss-Hermite rules with ``order`` nodes on each half-line,
    so the rule is exact for polynomials of degree below ``2 * order`` and
    stays accurate for integrands with a kink at zero such as ``|y| g(y)``.
    """
    if not variance > 0:
        raise ValueError("variance must be positive")
    if order < 2:
        raise ValueError("order must be at least 2")
    s, w = _half_line_rule(0, order)
    sd = np.sqrt(variance)
    vals = np.asarray(f(np.concatenate([sd * s, -sd * s])), dtype=float)
    return float(0.5 * np.sum(np.concatenate([w, w]) * vals))


@lru_cache(maxsize=64)
def _half_line_rule(power, order):
    """Gauss rule for the weight ``s^power exp(-s^2 / 2)`` on ``[0, inf)``.

    Built by the discretized Stieltjes procedure on a 600-node Gauss-Legendre
    grid over ``[0, 15]``; weights are normalized to sum to one.
    """
    x, w = np.polynomial.legendre.leggauss(600)
    s = 7.5 * (x + 1.0)
    mass = 7.5 * w * s**power * np.exp(-0.5 * s * s)
    mass = mass / mass.sum()
    alpha = np.zeros(order)
    beta = np.zeros(order)
    p_prev = np.zeros_like(s)
    p = np.ones_like(s)
    norm_prev = 1.0
    for k in range(order):
        norm = np.sum(mass * p * p)
        alpha[k] = np.sum(mass * s * p * p) / norm
        beta[k] = norm / norm_prev if k > 0 else norm
        p_prev, p = p, (s - alpha[k]) * p - (beta[k] if k > 0 else 0.0) * p_prev
        norm_prev = norm
    nodes, vecs = linalg.eigh_tridiagonal(alpha, np.sqrt(beta[1:]))
    return nodes, beta[0] * vecs[0] ** 2


def rayleigh_rule(order):
    """Gauss rule for the Rayleigh weight ``s exp(-s^2 / 2)``; weights sum to one."""
    return _half_line_rule(1, order)


def abs_expectation(g, variance, order=24):
    """``E[|Y| g(Y)]`` for ``Y ~ N(0, variance)``.

    Splits at zero and integrates each half against the Rayleigh weight, which
    absorbs the kink of ``|y|``; exact when ``g`` is a polynomial of degree
    below ``2 * order`` on each half-line.
    """
    if not variance > 0:
        raise ValueError("variance must be positive")
    sd = np.sqrt(variance)
    s, w = rayleigh_rule(order)
    vals = np.asarray(g(np.concatenate([sd * s, -sd * s])), dtype=float)
    return float(sd / _SQRT_2PI * np.sum(np.concatenate([w, w]) * vals))
